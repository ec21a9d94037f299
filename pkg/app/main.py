"""
Anisotropic Adaptation Batch API

This API provides endpoints for:
1. Solving a test case on a generated or uploaded mesh and reporting exact errors
2. Submitting long adaptation runs and convergence studies as background jobs
3. Polling and removing job records

Job records are stored in the MongoDB "jobs" collection; artifacts of a job
are written to OUTPUT_DIR/<job_id>.
"""

import asyncio
import logging
import math
import uuid
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime
from typing import Any, Dict

from fastapi import Body, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import RedirectResponse
from pydantic import ValidationError

from .cli import library_versions
from .config import settings
from .database_mongodb import (
    JobRecord,
    close_mongodb_connection,
    connect_to_mongodb,
    create_indexes,
    get_database,
)
from .errors import AdaptError
from .models import HealthResponse, JobRequest, JobStatusResponse, RunConfig, SolveResponse
from .study import initial_mesh, solve_state

logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

settings.ensure_output_dir()

# Process pool for adaptation and study jobs
executor = ProcessPoolExecutor(max_workers=settings.MAX_WORKERS)

app = FastAPI(
    title="Anisotropic Adaptation Batch API",
    description="Anisotropic P1 finite element adaptation runs and convergence studies",
    version="1.0.0",
)

cors_origins = ["*"] if "*" in settings.CORS_ORIGINS else settings.CORS_ORIGINS
app.add_middleware(
    CORSMiddleware,
    allow_origins=cors_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


def _validate_config(payload: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig(**payload)
    except ValidationError as e:
        raise HTTPException(status_code=400, detail=f"Invalid configuration: {e.errors()}")


def _job_response(job: Dict[str, Any]) -> JobStatusResponse:
    return JobStatusResponse(
        job_id=job["job_id"],
        command=job["job_type"],
        status=job["status"],
        progress=job.get("progress", 0),
        message=job.get("message"),
        created_at=job["created_at"],
        completed_at=job.get("completed_at"),
        result=job.get("result"),
    )


@app.on_event("startup")
async def startup_event():
    """Initialize MongoDB connection on startup."""
    try:
        await connect_to_mongodb()
        await create_indexes()
        logger.info("MongoDB connected and indexes created successfully")
    except Exception as e:
        logger.warning(f"Failed to connect to MongoDB: {e}")
        logger.warning("API will still start, but job endpoints will fail until MongoDB is configured.")


@app.on_event("shutdown")
async def shutdown_event():
    """Close MongoDB connection and executor on shutdown."""
    await close_mongodb_connection()
    executor.shutdown(wait=True)


@app.get("/")
async def root():
    return RedirectResponse(url="/docs")


@app.get("/health", response_model=HealthResponse)
async def health_check():
    """Health check endpoint."""
    try:
        db = get_database()
        await db.command("ping")
        db_status = "connected"
    except Exception as e:
        db_status = f"error: {str(e)}"

    return HealthResponse(
        status="healthy",
        database=db_status,
        output_dir=settings.OUTPUT_DIR,
        versions=library_versions(),
        timestamp=datetime.utcnow(),
    )


@app.post("/api/solve", response_model=SolveResponse)
async def solve(payload: Dict[str, Any] = Body(default_factory=dict)):
    """
    Solve the configured test case on the initial mesh, without adaptation.

    Runs inline, so it is meant for small meshes. Returns the exact energy
    and L2 errors, the residual estimate and its effectivity index.
    """
    config = _validate_config(payload)
    try:
        mesh = initial_mesh(config)
        state = solve_state(mesh, config)
    except AdaptError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Solve failed: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Error solving: {str(e)}")

    ei = state.global_ei
    return SolveResponse(
        case=config.case,
        vertices=mesh.num_vertices,
        triangles=mesh.num_triangles,
        energy_error=state.errors.energy,
        l2_error=state.errors.l2,
        estimated_error=state.estimates.global_eta,
        global_ei=None if math.isnan(ei) else ei,
        solver_iterations=state.u.iterations,
    )


@app.post("/api/jobs", response_model=JobStatusResponse)
async def submit_job(request: JobRequest):
    """
    Submit an adaptation run or a convergence study as a background job.

    Returns immediately with a job_id; poll GET /api/jobs/{job_id} for
    progress and the run summary.
    """
    config = _validate_config(request.config)
    job_id = str(uuid.uuid4())

    try:
        job = await JobRecord.create(job_id=job_id, job_type=request.command,
                                     metadata={"config": config.model_dump()})
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error creating job record: {str(e)}")

    try:
        from .worker import run_job_sync

        loop = asyncio.get_event_loop()
        loop.run_in_executor(
            executor,
            run_job_sync,
            job_id,
            request.command,
            config.model_dump(),
            settings.OUTPUT_DIR,
            settings.MONGODB_URL,
            settings.MONGODB_DATABASE,
        )
    except Exception as e:
        await JobRecord.update_status(job_id, status="failed",
                                      message=f"Error submitting job: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Error submitting job: {str(e)}")

    response = _job_response(job)
    response.message = f"{request.command} queued. Check the status endpoint for progress."
    return response


@app.get("/api/jobs/{job_id}", response_model=JobStatusResponse)
async def get_job_status(job_id: str):
    """
    Get the status of a background job.

    Status values:
    - queued: Job is waiting for a worker
    - processing: Job is running (check progress field)
    - completed: Finished (result field holds summary, artifacts and timings)
    - failed: Failed (message field contains the error)
    """
    try:
        job = await JobRecord.get_by_id(job_id)
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error retrieving job status: {str(e)}")

    if not job:
        raise HTTPException(status_code=404, detail="Job not found")
    return _job_response(job)


@app.get("/api/jobs", response_model=list)
async def list_active_jobs():
    """List all active (queued or processing) jobs."""
    try:
        jobs = await JobRecord.get_active_jobs()
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error retrieving jobs: {str(e)}")

    return [
        {
            "job_id": job["job_id"],
            "command": job["job_type"],
            "status": job["status"],
            "progress": job.get("progress", 0),
            "created_at": job["created_at"],
            "message": job.get("message"),
        }
        for job in jobs
    ]


@app.delete("/api/jobs/{job_id}")
async def delete_job(job_id: str):
    """
    Delete a job record.

    A job that is already running in a worker continues until it finishes;
    its status updates are then dropped.
    """
    try:
        deleted = await JobRecord.delete_by_id(job_id)
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error deleting job: {str(e)}")

    if not deleted:
        raise HTTPException(status_code=404, detail="Job not found")

    return {"message": "Job deleted successfully", "job_id": job_id}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host=settings.HOST, port=settings.PORT)
