import logging

from fastapi import APIRouter, HTTPException

from errors import CapabilityError, ConfigError, CouplingLabError, DomainError
from models.experiment_models import ExperimentConfig
from repos.result_storage_repo import ResultStorage
from service.experiment_service import run_experiment

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api/experiments", tags=["Experiments"])

storage = ResultStorage()


@router.post("")
def create_run(config: ExperimentConfig):
    # the server writes into its own results directory
    config = config.model_copy(update={"output": None})
    try:
        manifest = run_experiment(config, storage)
    except (CapabilityError, ConfigError, DomainError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    except CouplingLabError as e:
        logger.error(f"Run failed: {e}")
        raise HTTPException(status_code=422, detail=str(e))
    return manifest.model_dump(mode="json")


@router.get("")
async def list_runs():
    return {"runs": storage.list_manifests()}


@router.get("/{run_id}")
async def get_run(run_id: str):
    manifest = storage.get_manifest(run_id)
    if not manifest:
        raise HTTPException(status_code=404, detail="Run not found")
    return manifest
