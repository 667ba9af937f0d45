import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    # Tool identity; replays refuse campaigns recorded by another version
    TOOL_VERSION = "1.0.0"
    CONFIG_SCHEMA_VERSION = 1
    CHECKPOINT_FORMAT_VERSION = 1

    # Application Configuration
    LOG_LEVEL = os.getenv("CAUSEWAY_LOG_LEVEL", "INFO")
    DEFAULT_OUT_DIR = os.getenv("CAUSEWAY_OUT_DIR", "./campaigns")

    # Simulated cluster (nanoseconds of simulated time)
    NODE_COUNT = int(os.getenv("CAUSEWAY_NODE_COUNT", "5"))
    MIN_LATENCY_NS = int(os.getenv("CAUSEWAY_MIN_LATENCY_NS", "1000000"))
    MAX_LATENCY_NS = int(os.getenv("CAUSEWAY_MAX_LATENCY_NS", "10000000"))
    SKEW_BOUND_NS = int(os.getenv("CAUSEWAY_SKEW_BOUND_NS", "100000000"))
    BATCH_INTERVAL_NS = int(os.getenv("CAUSEWAY_BATCH_INTERVAL_NS", "100000000"))
    PAUSE_QUEUE_BOUND = 1024

    # Schedules
    STEPS_PER_SCHEDULE = int(os.getenv("CAUSEWAY_STEPS_PER_SCHEDULE", "12"))
    WINDOW_NS = int(os.getenv("CAUSEWAY_WINDOW_NS", "2500000000"))
    RESET_NS = int(os.getenv("CAUSEWAY_RESET_NS", "5000000000"))

    # State identification
    EPSILON = float(os.getenv("CAUSEWAY_EPSILON", "0.70"))
    MINHASH_K = int(os.getenv("CAUSEWAY_MINHASH_K", "128"))
    HASH_SEED = int(os.getenv("CAUSEWAY_HASH_SEED", "1"))
    CALIBRATION_MIN_SUMMARIES = 50
    CALIBRATION_COINCIDE_FRACTION = 0.90

    # Q-learning
    ALPHA = float(os.getenv("CAUSEWAY_ALPHA", "0.1"))
    GAMMA = float(os.getenv("CAUSEWAY_GAMMA", "0.6"))

    # Raft-like SUT
    SNAPSHOT_THRESHOLD = 4
    ELECTION_TIMEOUT_MIN_NS = 150_000_000
    ELECTION_TIMEOUT_MAX_NS = 300_000_000
    HEARTBEAT_INTERVAL_NS = 50_000_000
    CLIENT_TIMEOUT_NS = 1_000_000_000
    REQUESTS_PER_WINDOW = 4

    # Oracles
    ORACLE_KEYWORDS = ["fatal", "error", "bug"]
    MAX_LEADERLESS_WINDOWS = 3

    # Fault alphabet, in column order of the Q-table
    FAULT_TAGS = [
        "PartitionRandomHalves", "HealNetwork", "CrashNode", "RestartNode",
        "PauseNode", "ResumeNode", "IsolateNode", "RequestMembershipChange", "NoOp"
    ]

    # Seeded SUT defects that can be switched on per campaign
    SEEDED_BUGS = ["membership_rollback", "even_split_vote", "stale_read"]
