"""Strong stationary time through the dual chain."""

import asyncio

from fastapi import APIRouter

from birthdeath.app.schemas.api import SSTRequest
from birthdeath.app.schemas.reports import (
    SCHEMA_VERSION,
    bracket_rows,
    law_dict,
    num,
    sst_cdf_rows,
)
from birthdeath.app.services import duality_service, gallery_service, hitting_service

router = APIRouter(prefix="/duality", tags=["Duality"])


def _sst(req: SSTRequest) -> dict:
    rates = gallery_service.resolve_chain(req.chain)
    dual = duality_service.build_dual(rates, req.policy, window=req.N)
    law = duality_service.sst_law(rates, policy=req.policy, dual=dual)
    cdf = []
    for i in req.starts:
        cdf += sst_cdf_rows(duality_service.sst_cdf_from_state(rates, i, req.t, dual=dual))
    return {
        "schema": SCHEMA_VERSION,
        "law": law_dict(law),
        "mean": num(duality_service.dual_remainders(dual)[0]),
        "transform": bracket_rows(hitting_service.evaluate_laplace(law, req.s)),
        "cdf": cdf,
    }


@router.post("/sst")
async def sst(req: SSTRequest):
    return await asyncio.to_thread(_sst, req)
