"""Module providing settings for the workbench"""
from pydantic.v1 import BaseSettings, validator


class Settings(BaseSettings):
    """Class representing settings for the workbench"""
    class Config:
        env_file = '.env'
        extra = 'ignore'

    DMLM_THREADS: int = 4
    LOG_LEVEL: str = "INFO"
    LOG_FILE_PATH: str = "dmlm.log"
    DEFAULT_SEED: int = 1234

    # Preparation defaults
    MAX_SENTENCE_LENGTH: int = 64
    MIN_COUNT: int = 1
    MAX_VOCAB_SIZE: int = 32000
    LOWERCASE: bool = True

    CONTEXT_WINDOW: int = 64
    RLM_MIN_SAMPLES: int = 500
    WRITE_RETRY_ATTEMPTS: int = 3

    @validator("DMLM_THREADS")
    def at_least_one_thread(cls, v: int) -> int:
        """Bounds the fan-out semaphore."""
        if v < 1:
            raise ValueError("DMLM_THREADS must be >= 1")
        return v

    @validator("CONTEXT_WINDOW")
    def non_negative_window(cls, v: int) -> int:
        if v < 0:
            raise ValueError("CONTEXT_WINDOW must be >= 0 (0 means unbounded)")
        return v


settings = Settings()
