"""
Benchmark protocol settings.
"""

# Protocol
SCENARIOS_PER_TASK = 10
GOALS_PER_SCENARIO = 5
INVOCATION_BUDGET = 20
SUCCESS_DELTA = 0.02
MONITOR_THRESHOLD = 0.02
SLOW_THRESHOLD = 3.0
ER_DROP_PROBABILITY = 0.3
DEFAULT_MASTER_SEED = 42
MIN_PAIRS = 2
MAX_PAIRS = 4

# File paths
PROMPTS_DIR = "prompts"
LOG_FILE = "tabletop_agent.log"
TRIALS_FILE = "trials.jsonl"
SUMMARY_FILE = "summary.csv"
