"""Optional generation server implementing the memory engine's parametric
endpoint contract: POST /generate {"prompt"} -> {"text", "trained_round"}.

Requests are handled serially against a frozen checkpoint.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI
from pydantic import BaseModel

from .train import generate, load_checkpoint


class GenerateRequest(BaseModel):
    prompt: str
    max_new_tokens: int = 64


class GenerateResponse(BaseModel):
    text: str
    trained_round: int


def create_app(checkpoint_path: str | Path) -> FastAPI:
    model, payload = load_checkpoint(checkpoint_path)
    trained_round = int(payload["round"])
    app = FastAPI(title="mvtrainer", version="0.1.0")

    @app.post("/generate", response_model=GenerateResponse)
    def generate_endpoint(body: GenerateRequest):
        text = generate(model, body.prompt, max_new_tokens=body.max_new_tokens)
        return GenerateResponse(text=text, trained_round=trained_round)

    return app


def main(checkpoint_path: str, host: str = "127.0.0.1", port: int = 8378) -> None:
    import uvicorn

    uvicorn.run(create_app(checkpoint_path), host=host, port=port)
