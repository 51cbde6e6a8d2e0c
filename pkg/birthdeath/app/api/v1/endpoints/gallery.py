"""Chain gallery endpoints."""

from fastapi import APIRouter

from birthdeath.app.services import gallery_service

router = APIRouter(prefix="/gallery", tags=["Gallery"])


@router.get("")
async def list_gallery():
    return {
        name: {"description": rates.description, "spec": rates.model_dump()}
        for name, rates in gallery_service.gallery().items()
    }
