from fastapi import APIRouter

from .health import router as health_router
from .render import router as render_router

api_router = APIRouter()

# Include health routes at root level
api_router.include_router(health_router, tags=["health"])

# Include render routes with prefix
api_router.include_router(render_router, prefix="/api", tags=["render"])
