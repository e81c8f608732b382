"""Symbolic-regression model selection with corpus-trained function priors."""

__version__ = "0.1.0"

from .corpus import load_corpus, load_default_corpus, corpus_to_trees  # noqa: F401
from .enumeration import generate, iter_canonical  # noqa: F401
from .exprtree import (  # noqa: F401
    ExprTree,
    OperatorBasis,
    Phrase,
    PhraseKind,
    canonical_form,
    evaluate,
    extract_phrases,
    parse_expression,
    resolve_basis,
)
from .fit import Dataset, FitConfig, FitResult, fit_many, fit_params, log_likelihood  # noqa: F401
from .metrics import FBFConfig, Method, Ranking, rank  # noqa: F401
from .ngram import NGramModel, train  # noqa: F401
