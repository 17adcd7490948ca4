#!/usr/bin/env python3
"""
Startup script for the MX simulator API.
Loads settings from the environment (and .env) and starts the FastAPI server.
"""

import logging

import uvicorn

from app.config import configure_logging, get_settings

logger = logging.getLogger(__name__)


def main():
    """Start the FastAPI server."""
    settings = get_settings()
    configure_logging(settings.log_level)
    logger.info(f"Starting MX simulator API on {settings.api_host}:{settings.api_port} (reload={settings.api_reload})")
    uvicorn.run(
        "app.api.main:app",
        host=settings.api_host,
        port=settings.api_port,
        reload=settings.api_reload,
        log_level=settings.log_level.lower(),
    )


if __name__ == "__main__":
    main()
