"""
OpenTelemetry configuration and span helpers for impedans runs.

This module provides:
- Tracer provider setup, exporting to Jaeger only when enabled in settings
- Stage spans around synth / infer / eval / sweep cells
- Trace context propagation into queued sweep cells
"""

import logging
from contextlib import contextmanager
from typing import Dict, Optional

from opentelemetry import context, trace
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor
from opentelemetry.trace.propagation.tracecontext import TraceContextTextMapPropagator

from impedans import __version__
from impedans.config import Settings, get_settings

logger = logging.getLogger(__name__)

# Global tracer instance
tracer: Optional[trace.Tracer] = None


def setup_tracing(
    service_name: str = "impedans",
    settings: Optional[Settings] = None,
) -> trace.Tracer:
    """
    Initialize OpenTelemetry tracing.

    Spans are always recorded; they are exported to Jaeger when
    IMPEDANS_TRACING_ENABLED is set, and to the console when
    IMPEDANS_TRACING_CONSOLE is set.

    Args:
        service_name: Name of the service for tracing
        settings: Process settings; defaults to get_settings()

    Returns:
        Configured tracer instance
    """
    global tracer
    if isinstance(trace.get_tracer_provider(), TracerProvider):
        tracer = trace.get_tracer(__name__)
        return tracer
    settings = settings or get_settings()

    resource = Resource.create({
        "service.name": service_name,
        "service.version": __version__,
    })
    provider = TracerProvider(resource=resource)

    if settings.tracing_enabled and settings.jaeger_endpoint:
        from opentelemetry.exporter.jaeger.thrift import JaegerExporter

        provider.add_span_processor(
            BatchSpanProcessor(JaegerExporter(collector_endpoint=settings.jaeger_endpoint))
        )
        logger.info(f"Exporting spans to Jaeger at {settings.jaeger_endpoint}")

    if settings.tracing_console:
        from opentelemetry.sdk.trace.export import ConsoleSpanExporter

        provider.add_span_processor(BatchSpanProcessor(ConsoleSpanExporter()))

    trace.set_tracer_provider(provider)
    tracer = trace.get_tracer(__name__)
    logger.debug(f"OpenTelemetry tracing initialized for service: {service_name}")
    return tracer


def get_tracer() -> trace.Tracer:
    """Get the global tracer instance, falling back to the API default."""
    global tracer
    if tracer is None:
        tracer = trace.get_tracer(__name__)
    return tracer


def inject_trace_context() -> Dict[str, str]:
    """
    Return the current trace context as a W3C carrier dict.

    Passed to queued sweep cells so their spans join the sweep trace.
    """
    carrier: Dict[str, str] = {}
    TraceContextTextMapPropagator().inject(carrier)
    return carrier


def extract_trace_context(carrier: Optional[Dict[str, str]]) -> Optional[object]:
    """
    Attach the context in carrier, returning the token to detach it with.
    """
    if not carrier:
        return None
    ctx = TraceContextTextMapPropagator().extract(carrier)
    return context.attach(ctx)


def detach_trace_context(token: Optional[object]) -> None:
    if token is not None:
        context.detach(token)


@contextmanager
def trace_stage(stage: str, **attributes):
    """
    Span around one pipeline stage (synth, infer, eval, sweep cell).

    Exceptions are recorded on the span and re-raised.
    """
    with get_tracer().start_as_current_span(f"impedans.{stage}") as span:
        span.set_attribute("impedans.stage", stage)
        for key, value in attributes.items():
            if isinstance(value, (bool, int, float, str)):
                span.set_attribute(f"impedans.{key}", value)
            else:
                span.set_attribute(f"impedans.{key}", str(value))
        try:
            yield span
        except Exception as e:
            span.record_exception(e)
            span.set_status(trace.Status(trace.StatusCode.ERROR, str(e)))
            raise


def get_current_trace_id() -> Optional[str]:
    """Trace ID of the active span as hex, or None outside a recorded trace."""
    span_context = trace.get_current_span().get_span_context()
    if span_context.is_valid:
        return format(span_context.trace_id, "032x")
    return None


def flush_tracing() -> None:
    """Flush pending spans before the process exits."""
    provider = trace.get_tracer_provider()
    if isinstance(provider, TracerProvider):
        provider.force_flush()
