"""Python access to the kforge core.

Structured values are plain dicts and lists; the native layer exchanges them
as JSON text.
"""

import json

from . import _core
from ._core import KforgeError, Index as _Index, parse_judge, rouge_l, token_recall, tokenize

__all__ = [
    "KforgeError",
    "Index",
    "assign_bucket",
    "build_corpus",
    "build_dataset",
    "coverage",
    "ingest_text",
    "parse_judge",
    "regression_average",
    "rouge_l",
    "run_cli",
    "token_recall",
    "tokenize",
]


def run_cli(*args):
    """Run a kforge command in-process. Returns (exit_code, stdout, stderr)."""
    return _core.run_cli([str(a) for a in args])


def ingest_text(text, domain="default"):
    return json.loads(_core.ingest_text(text, domain))


def build_corpus(documents, threshold=8000):
    return json.loads(_core.build_corpus(json.dumps(documents), threshold))


def coverage(corpus, pairs):
    return json.loads(_core.coverage(json.dumps(corpus), json.dumps(pairs)))


class Index:
    def __init__(self, native):
        self._ix = native

    @classmethod
    def build(cls, documents, passage_tokens=512):
        return cls(_Index.build(json.dumps(documents), passage_tokens))

    @classmethod
    def load(cls, path):
        return cls(_Index.load(str(path)))

    def search(self, query, k=5):
        return json.loads(self._ix.search(query, k))

    def passage_text(self, passage_id):
        return self._ix.passage_text(passage_id)

    def __len__(self):
        return len(self._ix)


def assign_bucket(question_id, answer_index, config):
    return _core.assign_bucket(question_id, answer_index, json.dumps(config))


def build_dataset(pairs, config, index, corpus, jobs=1):
    """Training records (prompt, completion, meta) for train-split pairs."""
    return json.loads(_core.build_dataset(json.dumps(pairs), json.dumps(config), index._ix, json.dumps(corpus), jobs))


def regression_average(scores):
    return json.loads(_core.regression_average(json.dumps(scores)))
