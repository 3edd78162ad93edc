from fastapi import APIRouter, HTTPException, Query

from errors import CouplingLabError
from models.chain_models import ChainRequest
from service.chain_service import build_chain
from service.reflection_service import bisector_residuals, torus_bisector

router = APIRouter(prefix="/api", tags=["Geometry"])


@router.get("/bisector")
async def bisector(a: float = Query(..., gt=0, le=0.5), b: float = Query(..., ge=0),
                   samples: int = Query(1000, ge=2, le=100000)):
    """Equidistant set of [(a, 0)] and [(0, b)] on the flat torus"""
    try:
        geometry = torus_bisector(a, b)
    except CouplingLabError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return {**geometry.model_dump(), "max_residual": max(bisector_residuals(geometry, samples))}


@router.post("/chains")
def describe_chain(request: ChainRequest):
    try:
        chain = build_chain(request)
    except CouplingLabError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return {**chain.describe(), "labels": [p.label() for p in chain.states]}
