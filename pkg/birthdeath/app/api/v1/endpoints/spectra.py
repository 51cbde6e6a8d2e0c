"""Limit spectra of infinite chains."""

import asyncio

from fastapi import APIRouter

from birthdeath.app.schemas.api import LimitSpectrumRequest
from birthdeath.app.schemas.reports import spectrum_dict
from birthdeath.app.services import gallery_service, spectral_service

router = APIRouter(prefix="/spectra", tags=["Spectra"])


def _limit(req: LimitSpectrumRequest):
    rates = gallery_service.resolve_chain(req.chain)
    if req.kind == "exit":
        return spectral_service.limit_spectrum_exit(rates, req.count, req.tol, req.policy)
    if req.kind == "entrance":
        return spectral_service.limit_spectrum_entrance(rates, req.n, req.count, req.tol, req.policy)
    return spectral_service.ergodic_spectrum(rates, req.count, req.tol, req.policy)


@router.post("/limit")
async def limit_spectrum(req: LimitSpectrumRequest):
    spectrum = await asyncio.to_thread(_limit, req)
    return spectrum_dict(spectrum)
