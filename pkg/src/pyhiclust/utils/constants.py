# Environment variables
ENV_LOGGING = "PYHICLUST_LOGGING"
ENV_OUTPUT_ROOT = "PYHICLUST_OUTPUT_ROOT"
ENV_DEVICE = "PYHICLUST_DEVICE"
ENV_MNIST_DIR = "PYHICLUST_MNIST_DIR"

# Numerical guards
PROB_EPSILON = 1e-6
LOGIT_CLAMP = 15.0
POSTERIOR_TOLERANCE = 1e-6
SIMILARITY_SUM_TOLERANCE = 1e-4

# Dendrogram purity: exact below this many samples, sampled above
DP_EXACT_MAX_SAMPLES = 5000
DP_SAMPLED_PAIRS = 1_000_000
DP_SAMPLING_SEED = 0

# Artifact format tags
CHECKPOINT_FORMAT = "pyhiclust-checkpoint"
CHECKPOINT_VERSION = 1
HIERARCHY_FORMAT_VERSION = 1

# Run directory layout
CHECKPOINT_DIRNAME = "checkpoints"
LAST_CHECKPOINT = "last.ckpt"
FINAL_CHECKPOINT = "final.ckpt"
STEP_LOG = "steps.jsonl"
EPOCH_LOG = "epochs.jsonl"
HIERARCHY_EXPORT = "hierarchy.json"
EVAL_REPORT = "eval.json"
METRIC_LOG = "metrics.jsonl"
DISTANCE_CSV = "class_distances.csv"

# IDX element types (third magic byte) -> numpy big-endian dtype
IDX_DTYPES = {
    0x08: ">u1",
    0x09: ">i1",
    0x0B: ">i2",
    0x0C: ">i4",
    0x0D: ">f4",
    0x0E: ">f8",
}
