from celery import shared_task
from celery.utils.log import get_task_logger

from .dataset import load_graph_file
from .exceptions import ValidationFailed
from .layers import ParameterStore
from .schema import parse_model_description
from .training import sample_gradients

logger = get_task_logger(__name__)


@shared_task(bind=True, acks_late=True)
def compute_sample_gradients(self, model_yaml: str, params_payload: dict, sample_path: str) -> dict:
    """
    Forward and backward pass for one sample of an accumulation group.
    Arguments and result are plain JSON: the model as YAML text, parameters
    and gradients in checkpoint layout.
    """
    model = parse_model_description(model_yaml)
    if isinstance(model, list):
        raise ValidationFailed(model)
    params = ParameterStore.from_payload(params_payload)
    result = sample_gradients(model, params, load_graph_file(sample_path))
    logger.debug("task %s: %s loss=%.6g", self.request.id, sample_path, result.loss)
    return result.to_payload()
