import json
import logging
import math
import os
import shutil
import uuid
from datetime import datetime
from typing import List, Optional

from fastapi import APIRouter, Depends, File, Form, HTTPException, Query, UploadFile
from fastapi.responses import PlainTextResponse
from pydantic import ValidationError
from sqlalchemy import update
from sqlmodel import Session, select

from app.core import config as settings
from app.core.database import get_session
from app.core.errors import DataValidationError, TsciError
from app.core.models import (
    RunConfig,
    RunKind,
    RunPublic,
    RunStatus,
    SimulationRequest,
    TsciRun,
)
from app.modules.runs.config import build_run_config
from app.modules.runs.pipeline import execute_run
from app.modules.runs.report import emit_report, render_report
from app.modules.simlab.harness import (
    render_summary,
    run_replications,
    settings_from_request,
    summarize,
)

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/runs", tags=["TSCI Runs"])


def new_run_id() -> str:
    return f"RUN-{str(uuid.uuid4())[:8].upper()}"


def json_safe(value):
    """Non-finite floats become null; JSON responses reject NaN and Infinity."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [json_safe(v) for v in value]
    return value


def to_public(run: TsciRun) -> RunPublic:
    return RunPublic(
        run_id=run.run_id,
        kind=run.kind,
        status=run.status,
        config=json.loads(run.config_json),
        result=json_safe(json.loads(run.result_json)) if run.result_json else None,
        error=run.error,
        created_at=run.created_at,
        updated_at=run.updated_at,
    )


def get_run_or_404(session: Session, run_id: str) -> TsciRun:
    run = session.exec(select(TsciRun).where(TsciRun.run_id == run_id)).first()
    if not run:
        raise HTTPException(status_code=404, detail=f"Run {run_id} not found")
    return run


# --- Queue processing ---
def _execute(run: TsciRun):
    if run.kind == RunKind.simulation.value:
        request = SimulationRequest.model_validate_json(run.config_json)
        frame = run_replications(settings_from_request(request))
        summary = summarize(frame)
        run.result_json = json.dumps(
            {"summary": summary, "replications": json.loads(frame.to_json(orient="records"))}
        )
        run.report_text = render_summary(summary)
        return

    config = RunConfig.model_validate_json(run.config_json)
    result = execute_run(config)
    text, record = emit_report(result, extended=config.extended, config=config.model_dump(mode="json"))
    run.result_json = json.dumps(record)
    run.report_text = text


def claim_run(session: Session, run: TsciRun) -> bool:
    """Moves a run from queued to running; False when another worker got there first."""
    result = session.execute(
        update(TsciRun)
        .where(TsciRun.id == run.id, TsciRun.status == RunStatus.queued.value)
        .values(status=RunStatus.running.value, updated_at=datetime.utcnow())
    )
    session.commit()
    session.refresh(run)
    return result.rowcount == 1


def process_pending_runs(session: Session) -> int:
    """
    Executes queued runs oldest first. A failing run is marked failed with its error
    and the queue moves on. Returns the number of runs processed.
    """
    queued = session.exec(
        select(TsciRun).where(TsciRun.status == RunStatus.queued.value).order_by(TsciRun.id)
    ).all()

    processed = 0
    for run in queued:
        if not claim_run(session, run):
            logger.info("%s was claimed by another worker", run.run_id)
            continue
        processed += 1
        logger.info("Processing %s (%s)", run.run_id, run.kind)

        try:
            _execute(run)
            run.status = RunStatus.completed.value
        except (TsciError, ValidationError, ValueError) as e:
            logger.warning("Run %s failed: %s", run.run_id, e)
            run.status = RunStatus.failed.value
            run.error = str(e)

        run.updated_at = datetime.utcnow()
        session.add(run)
        session.commit()
    return processed


def queue_run(session: Session, kind: RunKind, config_json: str) -> TsciRun:
    run = TsciRun(run_id=new_run_id(), kind=kind.value, config_json=config_json)
    session.add(run)
    session.commit()
    session.refresh(run)
    return run


# --- Endpoints ---
@router.post("", response_model=RunPublic, status_code=201)
def create_run(
    file: UploadFile = File(...),
    config: str = Form(..., description="Run settings as a JSON object"),
    weight_matrix: Optional[UploadFile] = File(None, description="Headerless CSV for learner=user"),
    session: Session = Depends(get_session),
):
    """
    Upload a CSV and queue a TSCI run. `config` carries the same settings as the
    command line (y, d, z, x, vio, learner, nsplits, ...). The user learner's weight
    matrix is uploaded as its own file, never referenced by path.
    """
    try:
        values = json.loads(config)
    except json.JSONDecodeError as e:
        raise HTTPException(status_code=422, detail=f"config is not valid JSON: {e}")
    if not isinstance(values, dict):
        raise HTTPException(status_code=422, detail="config must be a JSON object")
    if "weight_matrix" in values or "weight-matrix" in values:
        raise HTTPException(
            status_code=422, detail="weight_matrix cannot be set in config; upload it as a file"
        )

    run_id = new_run_id()
    os.makedirs(settings.UPLOAD_DIR, exist_ok=True)
    file_path = os.path.join(settings.UPLOAD_DIR, f"{run_id}.csv")
    values["input"] = file_path
    weight_path = None
    if weight_matrix is not None:
        weight_path = os.path.join(settings.UPLOAD_DIR, f"{run_id}_weights.csv")
        values["weight_matrix"] = weight_path

    try:
        run_config = build_run_config(values)
    except DataValidationError as e:
        raise HTTPException(status_code=422, detail=str(e))

    with open(file_path, "wb") as buffer:
        shutil.copyfileobj(file.file, buffer)
    if weight_path:
        with open(weight_path, "wb") as buffer:
            shutil.copyfileobj(weight_matrix.file, buffer)

    run = TsciRun(run_id=run_id, kind=RunKind.estimate.value, config_json=run_config.model_dump_json())
    session.add(run)
    session.commit()
    session.refresh(run)
    logger.info("Queued %s", run.run_id)
    return to_public(run)


@router.get("", response_model=List[RunPublic])
def list_runs(
    status: Optional[RunStatus] = None,
    skip: int = 0,
    limit: int = Query(default=50, le=200),
    session: Session = Depends(get_session),
):
    statement = select(TsciRun)
    if status:
        statement = statement.where(TsciRun.status == status.value)
    statement = statement.order_by(TsciRun.id.desc()).offset(skip).limit(limit)
    return [to_public(run) for run in session.exec(statement).all()]


@router.post("/process-queue")
def process_queue(session: Session = Depends(get_session)):
    """Manually trigger the queue processor (the scheduler does this periodically)."""
    count = process_pending_runs(session)
    return {"processed": count}


@router.get("/{run_id}", response_model=RunPublic)
def get_run(run_id: str, session: Session = Depends(get_session)):
    return to_public(get_run_or_404(session, run_id))


@router.get("/{run_id}/report", response_class=PlainTextResponse)
def get_report(
    run_id: str,
    extended: bool = False,
    session: Session = Depends(get_session),
):
    run = get_run_or_404(session, run_id)
    if run.status != RunStatus.completed.value:
        raise HTTPException(status_code=400, detail=f"Run {run_id} is {run.status}, no report yet")
    if run.kind == RunKind.estimate.value:
        return render_report(json.loads(run.result_json), extended=extended)
    return run.report_text
