"""
MongoDB storage for background job records.
Uses Motor (async MongoDB driver) for FastAPI integration.
"""
import logging
from datetime import datetime, timedelta
from typing import Any, Dict, List, Optional

from motor.motor_asyncio import AsyncIOMotorClient
from pymongo.errors import ConnectionFailure

from .config import settings

logger = logging.getLogger(__name__)

JOBS_COLLECTION = "jobs"
ACTIVE_STATUSES = ["queued", "processing"]
FINISHED_STATUSES = ["completed", "failed"]

# Global MongoDB client
mongodb_client: Optional[AsyncIOMotorClient] = None
mongodb_db = None


async def connect_to_mongodb():
    """Connect to MongoDB database."""
    global mongodb_client, mongodb_db

    if not settings.MONGODB_URL:
        raise ValueError(
            "MONGODB_URL environment variable is not set. "
            "Please set it to your MongoDB connection string."
        )

    try:
        mongodb_client = AsyncIOMotorClient(settings.MONGODB_URL)
        # Test connection
        await mongodb_client.admin.command('ping')
        mongodb_db = mongodb_client[settings.MONGODB_DATABASE]
        logger.info(f"Connected to MongoDB database: {settings.MONGODB_DATABASE}")
        return mongodb_db
    except ConnectionFailure as e:
        logger.error(f"Failed to connect to MongoDB: {e}")
        raise


async def close_mongodb_connection():
    """Close MongoDB connection."""
    global mongodb_client, mongodb_db
    if mongodb_client:
        mongodb_client.close()
        mongodb_client = None
        mongodb_db = None
        logger.info("MongoDB connection closed")


def get_database():
    """Get MongoDB database instance."""
    if mongodb_db is None:
        raise RuntimeError("MongoDB database not initialized. Call connect_to_mongodb() first.")
    return mongodb_db


async def create_indexes():
    """Create the job collection indexes."""
    db = get_database()

    jobs_collection = db[JOBS_COLLECTION]
    await jobs_collection.create_index("job_id", unique=True)
    await jobs_collection.create_index("status")
    await jobs_collection.create_index("created_at")

    logger.info("MongoDB indexes created successfully")


def _status_update(
    status: str,
    progress: Optional[int] = None,
    message: Optional[str] = None,
    result: Optional[Dict[str, Any]] = None,
    error: Optional[str] = None,
) -> Dict[str, Any]:
    update_data = {
        "status": status,
        "updated_at": datetime.utcnow(),
    }
    if progress is not None:
        update_data["progress"] = progress
    if message is not None:
        update_data["message"] = message
    if result is not None:
        update_data["result"] = result
    if error is not None:
        update_data["error"] = error
    if status in FINISHED_STATUSES:
        update_data["completed_at"] = datetime.utcnow()
    return update_data


class JobRecord:
    """
    MongoDB document model for adaptation and study jobs.
    """

    @staticmethod
    async def create(
        job_id: str,
        job_type: str,
        status: str = "queued",
        metadata: Optional[Dict[str, Any]] = None
    ) -> Dict[str, Any]:
        """Create a new job record."""
        collection = get_database()[JOBS_COLLECTION]

        now = datetime.utcnow()
        document = {
            "job_id": job_id,
            "job_type": job_type,
            "status": status,
            "progress": 0,
            "message": None,
            "created_at": now,
            "updated_at": now,
            "completed_at": None,
            "metadata": metadata or {},
            "result": None,
            "error": None,
        }

        # insert_one adds _id to the dict it is given
        await collection.insert_one(dict(document))
        logger.info(f"Job record created: {job_id}")
        return document

    @staticmethod
    async def update_status(
        job_id: str,
        status: str,
        progress: Optional[int] = None,
        message: Optional[str] = None,
        result: Optional[Dict[str, Any]] = None,
        error: Optional[str] = None
    ) -> bool:
        """Update job status."""
        collection = get_database()[JOBS_COLLECTION]
        outcome = await collection.update_one(
            {"job_id": job_id},
            {"$set": _status_update(status, progress, message, result, error)}
        )
        return outcome.modified_count > 0

    @staticmethod
    async def get_by_id(job_id: str) -> Optional[Dict[str, Any]]:
        """Get job record by ID."""
        collection = get_database()[JOBS_COLLECTION]
        return await collection.find_one({"job_id": job_id}, {"_id": 0})

    @staticmethod
    async def get_active_jobs() -> List[Dict[str, Any]]:
        """Get all active (queued or processing) jobs, newest first."""
        collection = get_database()[JOBS_COLLECTION]
        cursor = collection.find(
            {"status": {"$in": ACTIVE_STATUSES}}, {"_id": 0}
        ).sort("created_at", -1)
        return await cursor.to_list(length=None)

    @staticmethod
    async def delete_by_id(job_id: str) -> bool:
        """Delete job record by ID."""
        collection = get_database()[JOBS_COLLECTION]
        outcome = await collection.delete_one({"job_id": job_id})
        return outcome.deleted_count > 0

    @staticmethod
    async def cleanup_old_jobs(days: int = 7) -> int:
        """Delete finished job records older than the given number of days."""
        collection = get_database()[JOBS_COLLECTION]
        cutoff_date = datetime.utcnow() - timedelta(days=days)
        outcome = await collection.delete_many({
            "created_at": {"$lt": cutoff_date},
            "status": {"$in": FINISHED_STATUSES}
        })
        logger.info(f"Cleaned up {outcome.deleted_count} old job records")
        return outcome.deleted_count


async def update_job_status(
    job_id: str,
    mongodb_url: str,
    mongodb_database: str,
    status: str,
    progress: Optional[int] = None,
    message: Optional[str] = None,
    result: Optional[Dict[str, Any]] = None,
    error: Optional[str] = None
) -> bool:
    """
    Update a job record from a worker process with its own short-lived client.

    Worker processes do not share the API's client, so each update opens and
    closes a connection. Errors are logged, not raised, so a lost database
    never aborts a running job.
    """
    client = None
    try:
        client = AsyncIOMotorClient(mongodb_url)
        collection = client[mongodb_database][JOBS_COLLECTION]
        outcome = await collection.update_one(
            {"job_id": job_id},
            {"$set": _status_update(status, progress, message, result, error)}
        )
        return outcome.modified_count > 0
    except Exception as e:
        logger.error(f"Error updating job status: {e}")
        return False
    finally:
        if client is not None:
            client.close()
