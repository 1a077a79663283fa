"""Non-neural scorers: rule-based co-occurrence and a frequency prior."""

from __future__ import annotations

import numpy as np


class RuleBasedModel:
    """Noisy-or over object-conditional action probabilities.

    P(a | o) = (count(a and o) + 1) / (count(o) + 2), estimated over training
    snapshots; a category never seen in training contributes the smoothed
    prior P(a) instead.
    """

    kind = "rule"

    def __init__(self, n_actions):
        self.n_actions = n_actions
        self.cond = {}
        self.prior = None

    def fit(self, examples):
        if not examples:
            raise ValueError("rule_fit needs a nonempty training set")
        K = self.n_actions
        co, seen = {}, {}
        act_counts = np.zeros(K)
        for ex in examples:
            tgt = np.zeros(K)
            tgt[sorted(ex.target)] = 1.0
            act_counts += tgt
            for o in set(ex.categories):
                seen[o] = seen.get(o, 0) + 1
                co[o] = co.get(o, 0.0) + tgt
        self.cond = {o: (co[o] + 1.0) / (seen[o] + 2.0) for o in seen}
        self.prior = (act_counts + 1.0) / (len(examples) + 2.0)
        return self

    def predict(self, categories):
        if self.prior is None:
            raise RuntimeError("model is not fitted")
        miss = np.ones(self.n_actions)
        for o in set(categories):
            miss *= 1.0 - self.cond.get(o, self.prior)
        return 1.0 - miss

    def score(self, example):
        return self.predict(example.categories)


def rule_fit(examples, n_actions):
    return RuleBasedModel(n_actions).fit(examples)


def rule_predict(model, categories):
    return model.predict(categories)


class FrequencyPrior:
    """Scores every example with the training frequency of each action."""

    kind = "prior"

    def __init__(self, n_actions):
        self.n_actions = n_actions
        self.freq = None

    def fit(self, examples):
        counts = np.zeros(self.n_actions)
        for ex in examples:
            counts[sorted(ex.target)] += 1.0
        self.freq = counts / max(len(examples), 1)
        return self

    def score(self, example):
        return self.freq.copy()
