import logging
from contextlib import asynccontextmanager

from apscheduler.schedulers.asyncio import AsyncIOScheduler
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from sqlmodel import Session

from app.core import config as settings
from app.core.database import create_db_and_tables, engine

# Import Routers from Modules
from app.modules.runs import router as runs_router
from app.modules.simlab import router as simlab_router

# Import Services for Scheduled Tasks
from app.modules.runs.router import process_pending_runs

settings.configure_logging()
logger = logging.getLogger(__name__)


def run_scheduled_queue_check():
    """
    Runs every TSCI_RUN_POLL_SECONDS.
    It creates a NEW database session specifically for this task.
    """
    with Session(engine) as session:
        try:
            count = process_pending_runs(session)
            if count > 0:
                logger.info("Processed %d queued run(s).", count)
        except Exception:
            logger.exception("Error in scheduled queue check")


@asynccontextmanager
async def lifespan(app: FastAPI):
    create_db_and_tables()

    scheduler = AsyncIOScheduler()
    scheduler.add_job(
        run_scheduled_queue_check, "interval", seconds=settings.RUN_POLL_SECONDS, max_instances=1
    )
    scheduler.start()
    logger.info("Scheduler started.")

    yield

    scheduler.shutdown()
    logger.info("Scheduler shut down.")


app = FastAPI(lifespan=lifespan, title="TSCI Estimation Service")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(runs_router.router)
app.include_router(simlab_router.router)


@app.get("/")
def root():
    return {"message": "Two Stage Curvature Identification service"}
