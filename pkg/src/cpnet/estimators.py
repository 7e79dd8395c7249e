"""scikit-learn style wrappers.

:class:`CompositionalPrototypeNetwork` learns from labelled base-class
features; :class:`EpisodeClassifier` is fitted on one support set and then
predicts its queries, so an episode reads ``clf.fit(Xs, ys).score(Xq, yq)``.
"""
from __future__ import annotations

from collections.abc import Mapping

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataio import AttributeTable, DatasetBundle, EmbeddingTable
from .episodes import EpisodeSpec
from .errors import ConfigError, MissingAttributeVector
from .model import CpnParams, Variant, episode_prototypes, query_probs
from .rng import RngStream
from .training import SgdConfig, meta_train, pretrain, with_generator_mode


def as_attribute_table(class_attributes) -> AttributeTable:
    if isinstance(class_attributes, AttributeTable):
        return class_attributes
    if isinstance(class_attributes, Mapping):
        ids = sorted(class_attributes)
        return AttributeTable(tuple(ids), np.stack([np.asarray(class_attributes[c], float) for c in ids]))
    raise TypeError("class_attributes must be an AttributeTable or a mapping class id -> vector")


class EpisodeClassifier(ClassifierMixin, BaseEstimator):
    """Prototype classifier for one episode.

    ``fit`` builds a prototype per support class; ``predict_proba`` scores
    queries by temperature-scaled cosine similarity to those prototypes.
    """

    def __init__(self, params=None, class_attributes=None, variant="ADAPTIVE"):
        self.params = params
        self.class_attributes = class_attributes
        self.variant = variant

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if not isinstance(self.params, CpnParams):
            raise ConfigError("EpisodeClassifier needs trained CpnParams")
        variant = Variant(self.variant)
        self.classes_ = unique_labels(y)
        if variant is Variant.VP:
            Z = np.zeros((self.classes_.size, self.params.n_attributes))
        else:
            table = as_attribute_table(self.class_attributes)
            Z = table.matrix(self.classes_.tolist())
        self.prototypes_ = episode_prototypes(self.params, variant, X, y, self.classes_.tolist(), Z)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "prototypes_")
        X = check_array(X, dtype=np.float64)
        return query_probs(X, self.prototypes_, self.params.tau2)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class CompositionalPrototypeNetwork(BaseEstimator):
    """Two-stage learner of component prototypes and an adaptive fusion head.

    ``fit(X, y, class_attributes)`` pre-trains on all training classes except a
    held-out validation fraction, then meta-trains on episodes and keeps the
    parameters that validate best.
    """

    def __init__(self, variant="ADAPTIVE", gen_input_mode="comp", pretrain_epochs=30, pretrain_lr=0.01,
                 batch_size=128, meta_epochs=10, meta_lr=0.001, momentum=0.9, weight_decay=5e-4,
                 episodes_per_epoch=100, val_episodes=600, n_way=5, k_shot=1, n_query=15,
                 val_fraction=0.2, random_state=0):
        self.variant = variant
        self.gen_input_mode = gen_input_mode
        self.pretrain_epochs = pretrain_epochs
        self.pretrain_lr = pretrain_lr
        self.batch_size = batch_size
        self.meta_epochs = meta_epochs
        self.meta_lr = meta_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.episodes_per_epoch = episodes_per_epoch
        self.val_episodes = val_episodes
        self.n_way = n_way
        self.k_shot = k_shot
        self.n_query = n_query
        self.val_fraction = val_fraction
        self.random_state = random_state

    def _split(self, classes):
        n_val = max(self.n_way, int(round(self.val_fraction * len(classes))))
        if len(classes) - n_val < 1:
            raise ConfigError(f"{len(classes)} classes cannot spare {n_val} for validation")
        val = RngStream(self.random_state, 0).sample(classes, n_val)
        return sorted(set(classes) - set(val)), sorted(val)

    def fit(self, X, y, class_attributes):
        X, y = check_X_y(X, y, dtype=np.float64)
        table = as_attribute_table(class_attributes)
        classes = unique_labels(y).tolist()
        missing = [c for c in classes if c not in table]
        if missing:
            raise MissingAttributeVector(f"no attribute vectors for classes {missing}")
        base, val = self._split(classes)
        bundle = DatasetBundle(EmbeddingTable(X, y), table, split=None)
        seed = self.random_state
        pre_cfg = SgdConfig(lr=self.pretrain_lr, momentum=self.momentum, weight_decay=self.weight_decay,
                            epochs=self.pretrain_epochs, batch_size=self.batch_size)
        meta_cfg = SgdConfig(lr=self.meta_lr, momentum=self.momentum, weight_decay=self.weight_decay,
                             epochs=self.meta_epochs, episodes_per_epoch=self.episodes_per_epoch,
                             val_episodes=self.val_episodes)
        spec = EpisodeSpec(self.n_way, self.k_shot, self.n_query)

        self.pretrained_params_, self.pretrain_log_ = pretrain(bundle, pre_cfg, seed, base=base)
        start = with_generator_mode(self.pretrained_params_, self.gen_input_mode)
        self.params_, self.meta_log_ = meta_train(bundle, start, meta_cfg, seed, self.variant, spec,
                                                  base=base, val=val)
        self.base_classes_ = np.array(base)
        self.val_classes_ = np.array(val)
        self.class_attributes_ = table
        self.n_features_in_ = X.shape[1]
        return self

    def episode_classifier(self, variant=None, class_attributes=None) -> EpisodeClassifier:
        """An unfitted :class:`EpisodeClassifier` carrying the learned parameters."""
        check_is_fitted(self, "params_")
        variant = Variant(variant or self.variant)
        params = self.pretrained_params_ if variant is Variant.LCP else self.params_
        table = self.class_attributes_ if class_attributes is None else as_attribute_table(class_attributes)
        return EpisodeClassifier(params, table, variant.value)

    def predict_episode(self, X_support, y_support, X_query, class_attributes=None):
        return self.episode_classifier(class_attributes=class_attributes).fit(X_support, y_support).predict(X_query)
