import os
import sys
import logging
import pandas as pd

from datetime import datetime
from dotenv import load_dotenv

load_dotenv("variables.env")

FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(process)d - %(message)s"


def setupCustomLogger(name):
    outdir = os.getenv("LOGGING_DIR", "logs")
    if not os.path.exists(outdir):
        os.makedirs(outdir, exist_ok=True)

    formatter = logging.Formatter(FORMAT)
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(formatter)

    timestamp = datetime.now().strftime("%Y%m%d")
    log_filename = f"{outdir}/{timestamp}_lpnuq.log"
    logging.basicConfig(
        filename=log_filename,
        level=_logLevel(os.getenv("LOGGING_LEVEL")),
        format=FORMAT,
    )

    logger = logging.getLogger(name)
    # modules can be imported again under spawn workers
    if not logger.handlers:
        logger.addHandler(handler)

    return logger


def _logLevel(level):
    match level:
        case "DEBUG":
            return logging.DEBUG
        case "INFO":
            return logging.INFO
        case "WARNING":
            return logging.WARNING
        case "ERROR":
            return logging.ERROR
        case "CRITICAL":
            return logging.CRITICAL
        case _:
            return logging.INFO


def logElapsed(logger, label, startTime):
    """
    Logs the time elapsed since `startTime` (a pandas Timestamp) in hours, minutes and seconds.
    """
    elapsed = (pd.Timestamp.now() - startTime).components
    logger.info(
        f"{label}, elapsed time: {elapsed.hours} hours, {elapsed.minutes} minutes, {elapsed.seconds} seconds"
    )
