"""
v1 API router, aggregating the endpoint routers.
"""

from fastapi import APIRouter

from birthdeath.app.api.v1.endpoints.boundary import router as boundary_router
from birthdeath.app.api.v1.endpoints.duality import router as duality_router
from birthdeath.app.api.v1.endpoints.gallery import router as gallery_router
from birthdeath.app.api.v1.endpoints.hitting import router as hitting_router
from birthdeath.app.api.v1.endpoints.spectra import router as spectra_router

api_v1_router = APIRouter(prefix="/api/v1")

api_v1_router.include_router(gallery_router)
api_v1_router.include_router(boundary_router)
api_v1_router.include_router(spectra_router)
api_v1_router.include_router(hitting_router)
api_v1_router.include_router(duality_router)
