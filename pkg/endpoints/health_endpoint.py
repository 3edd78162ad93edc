from fastapi import APIRouter

from config import APP_NAME, APP_VERSION
from endpoints import experiments_endpoint

router = APIRouter(tags=["Health"])


@router.get("/health")
async def health_check():
    return {
        "status": "healthy",
        "app": APP_NAME,
        "version": APP_VERSION,
        "stored_runs": len(experiments_endpoint.storage.list_manifests()),
    }
