LOGGER_NAME = "mcreplay"

ENV_THREADS = "MCREPLAY_THREADS"

MANIFEST_NAME = "manifest.jsonl"
RUN_MANIFEST_NAME = "run_manifest.json"
TRAINING_LOG_NAME = "training_log.jsonl"
CHECKPOINT_NAME = "model.mcrp"
SCORES_NAME = "scores.jsonl"
REPORT_TEXT_NAME = "report.txt"
REPORT_RECORDS_NAME = "report.jsonl"

LABEL_GENUINE = "genuine"
LABEL_REPLAYED = "replayed"
LABELS = (LABEL_GENUINE, LABEL_REPLAYED)

SPLIT_TRAIN = "train"
SPLIT_DEV = "dev"
SPLIT_EVAL = "eval"
SPLITS = (SPLIT_TRAIN, SPLIT_DEV, SPLIT_EVAL)

MODE_SINGLE = "single"
MODE_DUMMY = "dummy-multichannel"
MODE_MULTICHANNEL = "multichannel"
MODES = (MODE_SINGLE, MODE_DUMMY, MODE_MULTICHANNEL)

POSITION_BEGINNING = "beginning"
POSITION_MIDDLE = "middle"
POSITIONS = (POSITION_BEGINNING, POSITION_MIDDLE)

FRAME_DURATION = 0.020
REFERENCE_SAMPLE_RATES = (16000, 44100)

# core-set class counts of the reference corpus
CORE_GENUINE = 6331
CORE_REPLAYED = 17175

SPEED_OF_SOUND = 343.0

SECTION_DATA = "data"
SECTION_MODEL = "model"
SECTION_TRAIN = "train"
SECTION_EXPERIMENT = "experiment"
SECTIONS = (SECTION_DATA, SECTION_MODEL, SECTION_TRAIN, SECTION_EXPERIMENT)

DEFAULT_FILTER_SWEEP = (8, 16, 32, 64, 128)
DEFAULT_SEGMENT_LENGTHS = (0.5, 1.0, 1.5)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
