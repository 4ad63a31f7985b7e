from fastapi import APIRouter, Depends
from sqlmodel import Session

from app.core.database import get_session
from app.core.models import RunKind, RunPublic, SimulationRequest
from app.modules.runs.router import queue_run, to_public

router = APIRouter(prefix="/simulations", tags=["Simulations"])


@router.post("", response_model=RunPublic, status_code=201)
def create_simulation(request: SimulationRequest, session: Session = Depends(get_session)):
    """Queue a Monte Carlo run of scenario A, B or C; results appear under /runs."""
    run = queue_run(session, RunKind.simulation, request.model_dump_json())
    return to_public(run)
