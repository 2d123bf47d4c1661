"""Semi-parametric sparse retrieval engine.

One bi-encoder, two indexes: a non-parametric bag-of-tokens index built by
tokenization alone, and a parametric index of learned sparse term weights.
Search runs fully parametric, semi-parametric (learned query against the
token index), or late parametric (token-index candidates re-ranked by
on-the-fly embeddings).  Training, negative mining against the fixed token
index, BM25 baselines, evaluation metrics, and latency benchmarks round out
the toolkit.
"""

from .encoder import (EmbeddingStore, EncoderConfig, FileProvider, ToyEncoderParams,
                      ToyProvider, binarize, lex_mask, toy_encode)
from .errors import (BuildError, ContractError, EngineError, FormatError, MinerError,
                     NumericError, TrainingError, UsageError)
from .index import (BotIndex, ParamIndex, Passage, build_bot_index, build_param_index,
                    load_index, read_corpus_jsonl, save_index, search_bot, search_param)
from .pipelines import (CostLedger, Query, RerankConfig, read_queries_jsonl, run_beta,
                        run_full, run_late)
from .sparsevec import (BotVec, SparseVec, as_sparse, bot_encode, dot, dot_bot, elu1p,
                        maxpool, topk_sparsify)
from .vocab import TokenSeq, Vocabulary, load_vocab, tokenize

__version__ = "0.1.0"
