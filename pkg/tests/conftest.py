import numpy as np
import pytest

from nlidebias.corpus import Dataset, LabelScheme, NliInstance


def make_instance(premise, hypothesis, gold="entailment", inst_id="x0", source="unit"):
    premise = tuple(premise.split()) if isinstance(premise, str) else tuple(premise)
    hypothesis = (
        tuple(hypothesis.split()) if isinstance(hypothesis, str) else tuple(hypothesis)
    )
    return NliInstance(id=inst_id, premise=premise, hypothesis=hypothesis,
                       gold=gold, source=source)


def make_dataset(rows, name="unit", split="train", scheme=LabelScheme.THREE_WAY):
    instances = tuple(
        make_instance(p, h, gold, inst_id=f"{name}-{i}", source=name)
        for i, (p, h, gold) in enumerate(rows)
    )
    return Dataset(name=name, split=split, scheme=scheme, instances=instances)


class ConstantModel:
    """Predicts one fixed distribution for every instance."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)

    def predict_proba(self, instances):
        return np.tile(self.probs, (len(instances), 1))


class OracleModel:
    """Predicts each instance's gold label with the given confidence."""

    def __init__(self, confidence=1.0):
        self.confidence = confidence

    def predict_proba(self, instances):
        from nlidebias.corpus import label_index

        out = np.full((len(instances), 3), (1.0 - self.confidence) / 2.0)
        for row, inst in zip(out, instances):
            row[label_index(inst.gold)] = self.confidence
        return out


@pytest.fixture
def toy_rows():
    return [
        ("the cat sat on the mat", "a cat sat", "entailment"),
        ("a dog barked loudly", "the dog was silent", "contradiction"),
        ("birds fly south", "birds may return", "neutral"),
        ("rain fell all day", "the ground got wet", "entailment"),
        ("she read a book", "she hates reading", "contradiction"),
        ("the sun rose", "morning arrived", "neutral"),
    ]


@pytest.fixture
def toy_dataset(toy_rows):
    return make_dataset(toy_rows)
