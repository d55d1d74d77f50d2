"""Model-agnostic debiasing toolkit for premise/hypothesis classifiers.

Train simple probabilistic text-pair models, mitigate known dataset
biases (instance reweighting, bias-product ensembling, and their
combinations), merge heterogeneous training sets, augment training
data, and evaluate everything on multi-scheme benchmark suites.
"""

from .corpus import (
    Dataset,
    Label,
    LabelScheme,
    NliInstance,
    SyntheticBiasSpec,
    extract_hard_subset,
    generate_synthetic,
    load_jsonl,
    load_tsv,
    save_tsv,
    tokenize,
)
from .classifier import (
    BiasExpert,
    SoftmaxClassifier,
    TextPairClassifier,
    TrainingConfig,
    gradient_check,
    load_checkpoint,
    save_checkpoint,
    train_bias_expert,
    weighted_batch_loss,
)
from .debias import (
    DebiasPlan,
    DebiasedClassifier,
    best_ensemble,
    bias_product,
    mixweight_weights,
    reweight_weights,
    train_debiased,
)
from .merge import (
    EnsembleMode,
    MergePlan,
    MergeSource,
    ensemble_predict,
    merge_datasets,
    performance_weights,
    size_weights,
)
from .evalharness import (
    EvalEntry,
    EvalReport,
    EvalSuite,
    RunMatrix,
    accuracy,
    correlation_matrix,
    emit_report,
    evaluate_model,
    map_prediction,
    mcc,
    pearson,
    select_model,
)
from .augment import (
    EmbeddingTable,
    SynonymLexicon,
    augment_dataset,
    auto_quality,
    external_transform,
    synonym_substitute,
    text_swap,
)

__version__ = "0.1.0"
