import io

from fastapi import APIRouter, Depends, HTTPException
from fastapi.responses import Response
from PIL import Image

from ..core.dependencies import RenderService, get_render_service
from ..core.errors import DatasetError, InvalidInput, PatchletError
from ..pipeline.dataset import to_srgb8
from ..schemas import RenderRequest, SceneSummary

router = APIRouter()


def _require_loaded(service: RenderService) -> None:
    if not service.loaded:
        raise HTTPException(
            status_code=503,
            detail="No checkpoint loaded. Set PATCHLET_CHECKPOINT to a saved checkpoint",
        )


@router.get("/scene", response_model=SceneSummary)
async def scene_summary(service: RenderService = Depends(get_render_service)) -> SceneSummary:
    """Topology counts, lights and validation report of the served scene"""
    _require_loaded(service)
    return service.summary()


@router.post("/render", response_class=Response)
def render_view(request: RenderRequest, service: RenderService = Depends(get_render_service)) -> Response:
    """
    Render the served scene as an 8-bit sRGB PNG

    Either `camera_id` ('<split>:<index>' of the served dataset) or an
    explicit `camera` selects the view.
    """
    _require_loaded(service)
    try:
        image = service.render(request)
    except DatasetError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except InvalidInput as e:
        raise HTTPException(status_code=422, detail=str(e))
    except PatchletError as e:
        raise HTTPException(status_code=500, detail=f"Render error: {str(e)}")

    buffer = io.BytesIO()
    Image.fromarray(to_srgb8(image), mode="RGB").save(buffer, format="PNG")
    return Response(content=buffer.getvalue(), media_type="image/png")
