from typing import Dict

from fastapi import APIRouter, Depends

from .. import __version__
from ..core.dependencies import RenderService, get_render_service

router = APIRouter()


@router.get("/")
async def root() -> Dict:
    """Root endpoint with API information"""
    return {
        "message": "Patchlet inverse rendering API",
        "status": "active",
        "version": __version__,
        "documentation": "/docs",
    }


@router.get("/health")
async def health_check(service: RenderService = Depends(get_render_service)) -> Dict:
    return {
        "status": "healthy",
        "checkpoint_loaded": service.loaded,
        "cameras": len(service.frames),
        "service": "patchlet-render-api",
    }
