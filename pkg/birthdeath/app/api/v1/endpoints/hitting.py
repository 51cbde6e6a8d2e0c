"""Hitting-time transforms."""

import asyncio

from fastapi import APIRouter

from birthdeath.app.schemas.api import LaplaceRequest
from birthdeath.app.schemas.reports import SCHEMA_VERSION, bracket_rows, law_dict, moments_dict
from birthdeath.app.services import gallery_service, hitting_service

router = APIRouter(prefix="/hitting", tags=["Hitting"])


def _laplace(req: LaplaceRequest) -> dict:
    rates = gallery_service.resolve_chain(req.chain)
    law = hitting_service.hitting_law(rates, req.i, req.n, req.N, policy=req.policy)
    return {
        "schema": SCHEMA_VERSION,
        "law": law_dict(law),
        "moments": moments_dict(hitting_service.moments(law)),
        "transform": bracket_rows(hitting_service.evaluate_laplace(law, req.s)),
    }


@router.post("/laplace")
async def laplace(req: LaplaceRequest):
    return await asyncio.to_thread(_laplace, req)
