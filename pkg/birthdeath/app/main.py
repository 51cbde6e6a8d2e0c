"""
birthdeath: FastAPI application entry point.

Read-only compute endpoints over the same services the CLI uses.
"""

import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from birthdeath.app.api.v1.router import api_v1_router
from birthdeath.app.core.config import settings
from birthdeath.app.core.exceptions import AppException, ConfigError
from birthdeath.app.services import gallery_service

logging.basicConfig(level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO))
logger = logging.getLogger("birthdeath")

VERSION = "1.0.0"


@asynccontextmanager
async def lifespan(app: FastAPI):  # noqa: ARG001
    logger.info("birthdeath API starting up...")
    logger.info("gallery: %s", ", ".join(gallery_service.gallery_names()))
    yield
    logger.info("birthdeath API shutting down...")


app = FastAPI(
    title="birthdeath",
    description="Hitting-time laws, spectra, boundary classification and separation bounds",
    version=VERSION,
    lifespan=lifespan,
    docs_url="/docs",
    redoc_url="/redoc",
)


@app.exception_handler(AppException)
async def _app_exception_handler(_request: Request, exc: AppException) -> JSONResponse:
    return JSONResponse(
        status_code=exc.status_code,
        content={"detail": exc.detail, "exit_code": exc.exit_code},
    )


@app.exception_handler(RequestValidationError)
async def _validation_handler(_request: Request, exc: RequestValidationError) -> JSONResponse:
    errors = [
        {"loc": ".".join(str(p) for p in err.get("loc", ())), "msg": str(err.get("msg", ""))}
        for err in exc.errors()
    ]
    return JSONResponse(
        status_code=422,
        content={"detail": errors, "exit_code": ConfigError.exit_code},
    )


app.include_router(api_v1_router)


@app.get("/health")
async def health():
    return {"status": "ok", "version": VERSION}
