"""
Configuration management for the tabletop agent.
"""
import os
from typing import Optional
from dataclasses import dataclass
from dotenv import load_dotenv

load_dotenv()


@dataclass
class ReasonerConfig:
    """Chat-completion backend configuration."""
    api_key: Optional[str]
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    timeout: int = 60
    max_retries: int = 3
    backoff_factor: float = 1.0


@dataclass
class RunConfig:
    """Benchmark run defaults."""
    output_dir: str = "reports"
    parallel: int = 1
    observation_noise: float = 0.0


class ConfigManager:
    """Manages application configuration."""

    def __init__(self):
        self.reasoner = self._load_reasoner_config()
        self.run = self._load_run_config()

    def _load_reasoner_config(self) -> ReasonerConfig:
        """Load reasoner configuration from environment."""
        return ReasonerConfig(
            api_key=os.getenv("REASONER_API_KEY"),
            base_url=os.getenv("REASONER_BASE_URL", "https://api.openai.com/v1"),
            model=os.getenv("REASONER_MODEL", "gpt-4o"),
            timeout=int(os.getenv("REASONER_TIMEOUT", "60")),
            max_retries=int(os.getenv("REASONER_MAX_RETRIES", "3")),
            backoff_factor=float(os.getenv("REASONER_BACKOFF_FACTOR", "1.0"))
        )

    def _load_run_config(self) -> RunConfig:
        """Load run configuration from environment."""
        return RunConfig(
            output_dir=os.getenv("BENCH_OUTPUT_DIR", "reports"),
            parallel=int(os.getenv("BENCH_PARALLEL", "1")),
            observation_noise=float(os.getenv("OBSERVATION_NOISE", "0.0"))
        )

    def validate(self, require_credentials: bool = False) -> list:
        """Validate configuration and return any errors."""
        errors = []

        if require_credentials and not self.reasoner.api_key:
            errors.append("REASONER_API_KEY environment variable is required for the http backend")

        if self.reasoner.timeout <= 0:
            errors.append("Reasoner timeout must be positive")

        if self.reasoner.max_retries < 0:
            errors.append("Reasoner max retries must be non-negative")

        if self.run.parallel <= 0:
            errors.append("Parallelism must be positive")

        if self.run.observation_noise < 0:
            errors.append("Observation noise must be non-negative")

        return errors


config = ConfigManager()
