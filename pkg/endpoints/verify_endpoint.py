from fastapi import APIRouter, HTTPException

from errors import CouplingLabError
from models.experiment_models import VerifyRequest
from service.experiment_service import CHECKS, run_check

router = APIRouter(prefix="/api/verify", tags=["Verify"])


@router.get("")
async def list_checks():
    return {"checks": sorted(CHECKS)}


@router.post("")
def verify(request: VerifyRequest):
    try:
        report = run_check(request.check, request.params)
    except CouplingLabError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return report.dump()
