from pathlib import Path

INPUT_DATA_DIR = Path(__file__).parent / 'data_input'
RESULTS_DIR = Path(__file__).parent / 'data_output'

INDEX_FILE_NAME = 'corpus.index'
FIRST_STAGE_RUN_NAME = 'first_stage.run'
RERANKED_RUN_NAME = 'reranked.run'
CHECKPOINT_NAME = 'model.ckpt'
TRAINING_LOG_NAME = 'training_log.jsonl'
REPORT_NAME = 'metrics.tsv'
EXPLANATIONS_NAME = 'explanations.jsonl'
ANALYSIS_NAME = 'missing_tokens.tsv'

# Ограничения длины входа.
MAX_SENTENCES = 500
MAX_DOCUMENT_TOKENS = 5000
MAX_QUERY_TOKENS = 50

# Первая стадия.
FIRST_STAGE_DEPTH = 100
BM25_K1 = 1.2
BM25_B = 0.75

# Отбор предложений.
DEFAULT_K = 20
DEFAULT_TEMPERATURE = 1.0
PROBABILITY_CLAMP = 1.0 - 1e-12
SELECTOR_HIDDEN = 32

# Ранкер (настольный масштаб).
MAX_LEN = 128
MODEL_DIM = 64
NUM_LAYERS = 2
NUM_HEADS = 4
FF_DIM = 128
DROPOUT = 0.1

# Обучение.
MARGIN = 0.2
SELECTOR_LR = 1e-3
RANKER_LR = 1e-3
WEIGHT_DECAY = 0.01
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
BATCH_SIZE = 8
WARMUP_BATCHES = 100
EPOCHS = 3
TRIPLES_PER_EPOCH = 256
SELECTOR_EPOCHS = 2
VALIDATION_FRACTION = 0.2
SELECTOR_FRACTION = 0.2
SEED = 1

# Оценка.
METRIC_CUTOFFS = (10, 20)
RUN_TAG = 'select-and-rank'
WORKERS = 4
