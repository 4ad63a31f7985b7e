import logging
import os

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

N_JOBS = int(os.getenv("TSCI_N_JOBS", "1"))
RUN_POLL_SECONDS = int(os.getenv("TSCI_RUN_POLL_SECONDS", "30"))
UPLOAD_DIR = os.getenv("TSCI_UPLOAD_DIR", "media/uploads")
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str = LOG_LEVEL):
    """Installs one stream handler on the `app` logger (idempotent)."""
    root = logging.getLogger("app")
    root.setLevel(level.upper())
    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
    return root
