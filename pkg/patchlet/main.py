from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
import uvicorn

from . import __version__
from .api import api_router
from .core.logging import configure_logging
from .core.settings import get_settings

configure_logging(get_settings().log_level)

# Create FastAPI application
app = FastAPI(
    title="Patchlet Render API",
    description="Renders optimized triplet scenes and meshes from saved checkpoints",
    version=__version__,
    docs_url="/docs",
    redoc_url="/redoc",
)

# CORS configuration for local viewers
app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:3000", "http://localhost:5173"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include API routes
app.include_router(api_router)

if __name__ == "__main__":
    uvicorn.run(app, host="0.0.0.0", port=8000)
