"""
FastAPI main application for the MX simulator API.
"""

import logging

import uvicorn
from fastapi import FastAPI

from app.api.endpoints import router
from app.api.middleware import setup_middleware
from app.config import configure_logging, get_settings

configure_logging()
logger = logging.getLogger(__name__)

API_VERSION = "1.0.0"

# Create FastAPI app
app = FastAPI(
    title="MX Edge Training Simulator API",
    description="Bit-accurate MX quantization, MAC traces, GeMM latency and training-memory models",
    version=API_VERSION,
)

setup_middleware(app)

app.include_router(router, prefix="/api/v1")


@app.get("/")
async def root():
    """Health check endpoint."""
    return {"message": "MX Edge Training Simulator API", "status": "healthy"}


@app.get("/health")
async def health_check():
    """Detailed health check."""
    settings = get_settings()
    return {
        "status": "healthy",
        "version": API_VERSION,
        "settings": {
            "freq_mhz": settings.freq_mhz,
            "train_engine": settings.train_engine,
            "seed": settings.seed,
        },
    }


if __name__ == "__main__":
    settings = get_settings()
    uvicorn.run("app.api.main:app", host=settings.api_host, port=settings.api_port, reload=settings.api_reload)
