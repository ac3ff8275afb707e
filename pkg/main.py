"""
SPD Frank-Wolfe API
FastAPI application exposing Karcher-mean solves, oracle checks and ensemble generation
"""

import os
import time
import uuid
from datetime import datetime, timezone
from typing import Optional

from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, ValidationError

from utils.logger import logger, log_api_request, log_validation_error, RunContext

# Load environment variables
load_dotenv()

from models.bench import WeightScheme
from models.ensemble import EnsemblePayload, InitChoice, Method, SolverConfig
from services.benchmark_service import gen_ensemble, run_oracle_check
from services.karcher_mean import parse_ensemble, solve_mean
from utils.errors import ConfigError, SpdFrankWolfeError

app = FastAPI(
    title="SPD Frank-Wolfe API",
    description="Projection-free Karcher mean solvers on positive definite matrices",
    version="1.0.0"
)


class MeanRequest(BaseModel):
    ensemble: EnsemblePayload
    method: Method = Method.RFW
    init: InitChoice = InitChoice.HARMONIC
    max_iter: Optional[int] = Field(None, ge=0)
    gap_tol: Optional[float] = Field(None, ge=0)


class OracleCheckRequest(BaseModel):
    dim: int = Field(2, ge=1, le=4)
    trials: int = Field(5, ge=1, le=200)
    seed: int = Field(0, ge=0)


class GenerateRequest(BaseModel):
    dim: int = Field(..., ge=1, le=200)
    count: int = Field(..., ge=1, le=200)
    seed: int = Field(0, ge=0)
    condition_number: float = Field(10.0, ge=1.0)
    weights: WeightScheme = WeightScheme.UNIFORM


# Logging middleware
@app.middleware("http")
async def log_requests(request: Request, call_next):
    """Tag every record of a request with its run id"""
    start_time = time.time()
    run_id = str(uuid.uuid4())

    with RunContext(run_id):
        logger.info(
            f"Request started: {request.method} {request.url.path}",
            method=request.method,
            path=request.url.path,
        )
        try:
            response = await call_next(request)
            log_api_request(
                method=request.method,
                path=request.url.path,
                status_code=response.status_code,
                duration=time.time() - start_time,
            )
            return response
        except Exception as e:
            logger.error(
                f"Request failed: {request.method} {request.url.path}",
                error=e,
                duration=time.time() - start_time,
            )
            raise


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "timestamp": datetime.now(timezone.utc).isoformat()}


@app.post("/api/mean")
def compute_mean(request: MeanRequest):
    """Karcher mean of the posted ensemble"""
    try:
        ensemble = parse_ensemble(request.ensemble.model_dump())
        overrides = {"x0": request.init}
        if request.max_iter is not None:
            overrides["max_iter"] = request.max_iter
        if request.gap_tol is not None:
            overrides["gap_tol"] = request.gap_tol
        result = solve_mean(ensemble, request.method, SolverConfig(**overrides))
        return result.to_json_dict()
    except ConfigError as e:
        log_validation_error("ensemble", request.ensemble.dim, str(e))
        raise HTTPException(status_code=400, detail=str(e))
    except SpdFrankWolfeError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error("Mean computation failed", error=e)
        raise HTTPException(status_code=500, detail=f"Internal server error: {str(e)}")


@app.post("/api/oracle-check")
def oracle_check(request: OracleCheckRequest):
    """Closed-form oracles against brute force on random instances"""
    try:
        summary = run_oracle_check(request.dim, request.trials, request.seed)
        return {**summary.model_dump(), "passed": summary.passed}
    except SpdFrankWolfeError as e:
        raise HTTPException(status_code=422, detail=str(e))


@app.post("/api/ensembles/generate", response_model=EnsemblePayload)
def generate_ensemble(request: GenerateRequest):
    """Random SPD ensemble, deterministic per seed"""
    ensemble = gen_ensemble(request.dim, request.count, request.seed, request.condition_number, request.weights)
    return EnsemblePayload.from_ensemble(ensemble)


# === EXCEPTION HANDLERS ===

@app.exception_handler(RequestValidationError)
@app.exception_handler(ValidationError)
async def validation_exception_handler(request: Request, exc: Exception):
    """Handle pydantic validation errors"""
    return JSONResponse(
        status_code=400,
        content={"detail": f"Validation error: {str(exc)}"}
    )


@app.exception_handler(ConfigError)
async def config_error_handler(request: Request, exc: ConfigError):
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.exception_handler(SpdFrankWolfeError)
async def solver_error_handler(request: Request, exc: SpdFrankWolfeError):
    return JSONResponse(status_code=422, content={"detail": str(exc)})


@app.exception_handler(Exception)
async def general_exception_handler(request: Request, exc: Exception):
    """Handle general exceptions"""
    logger.error("Unhandled exception", error=exc)
    return JSONResponse(
        status_code=500,
        content={"detail": "Internal server error"}
    )


@app.on_event("startup")
async def startup_event():
    logger.info("SPD Frank-Wolfe API starting up",
                environment=os.getenv("SPDFW_ENV", "development"),
                api_version=app.version)


def serve(host: str = "0.0.0.0", port: int = 8000):
    import uvicorn
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    serve(port=int(os.getenv("PORT", "8000")))
