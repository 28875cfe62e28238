"""Amortized skeleton posteriors: features, cascade classifier, dynamic adaptation."""
from .cascade import CascadeConfig, CascadeModel, SchemaError, SkeletonPosterior, infer_posterior, train_cascade
from .dynamic import (AdaptConfig, AdaptedModel, adapt_model, bootstrap_dynamic_corpus,
                      dynamic_posterior, fci_bootstrap_posterior)
from .features import PairFeatures, StageContext, extract_pair_features
