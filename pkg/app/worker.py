"""
Background job worker for ProcessPoolExecutor.

This module contains the function that runs adaptation and study jobs in
separate processes so that long runs do not block the API.
"""

import asyncio
import json
import logging
import os
from typing import Any, Dict

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def run_job_sync(
    job_id: str,
    command: str,
    config: Dict[str, Any],
    output_dir: str,
    mongodb_url: str,
    mongodb_database: str,
) -> Dict[str, Any]:
    """
    Run one adapt or study job synchronously in a separate process.

    This function is designed to be run in a ProcessPoolExecutor.
    It must be at module level (not nested) for pickling.

    Args:
        job_id: Unique job identifier
        command: "adapt" or "study"
        config: RunConfig fields
        output_dir: Base output directory; artifacts go to output_dir/job_id
        mongodb_url: MongoDB connection string of the job store
        mongodb_database: MongoDB database name

    Returns:
        Dictionary with the run summary
    """
    # Import here to keep the pickled call light
    from .cli import run_command
    from .database_mongodb import update_job_status
    from .models import RunConfig

    def report(status: str, **fields: Any) -> None:
        asyncio.run(update_job_status(job_id, mongodb_url, mongodb_database, status=status, **fields))

    try:
        logger.info(f"Worker process started for job {job_id}")
        report("processing", progress=1, message=f"Starting {command}...")

        run_config = RunConfig(**{**config, "output_dir": os.path.join(output_dir, job_id)})

        def progress(percent: int, message: str) -> None:
            report("processing", progress=max(1, min(percent, 99)), message=message)

        manifest = run_command(command, run_config, progress)
        # JSON round trip turns NaN summary entries into null
        result = json.loads(manifest.model_dump_json(include={"summary", "artifacts", "timings"}))
        report("completed", progress=100, message=f"{command} completed", result=result)
        logger.info(f"Job {job_id}: {command} completed successfully")
        return result

    except Exception as e:
        logger.error(f"Job {job_id}: Error during processing: {str(e)}", exc_info=True)
        report("failed", progress=0, message=f"Error: {str(e)}", error=str(e))
        raise
