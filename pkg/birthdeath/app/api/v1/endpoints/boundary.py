"""Boundary classification endpoint."""

import asyncio

from fastapi import APIRouter

from birthdeath.app.schemas.api import ChainRequest
from birthdeath.app.schemas.reports import boundary_report_dict
from birthdeath.app.services import gallery_service, rates_service

router = APIRouter(prefix="/boundary", tags=["Boundary"])


@router.post("/classify")
async def classify(req: ChainRequest):
    rates = gallery_service.resolve_chain(req.chain)
    report = await asyncio.to_thread(rates_service.classify_boundary, rates, req.policy)
    return boundary_report_dict(rates_service.require_determined(report))
