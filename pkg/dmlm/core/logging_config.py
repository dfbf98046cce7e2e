import logging
import os
from dmlm.core.config import settings


def setup_logging(level: str | None = None):
    """
    Sets up the logging configuration for the workbench.
    Logs to console and a file.
    """
    level_name = (level or settings.LOG_LEVEL).upper()
    log_level = getattr(logging, level_name, logging.INFO)

    # Create logs directory if it doesn't exist
    log_file_dir = os.path.dirname(settings.LOG_FILE_PATH)
    if log_file_dir and not os.path.exists(log_file_dir):
        os.makedirs(log_file_dir)

    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(), # Console handler
            logging.FileHandler(settings.LOG_FILE_PATH) # File handler
        ]
    )

    logging.getLogger('asyncio').setLevel(logging.WARNING)

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)

    logging.info(f"Logging configured at level: {level_name}")
    logging.debug(f"Logs will also be written to: {settings.LOG_FILE_PATH}")
