"""Structure-to-structure instruction tuning toolkit.

Turns declarative task specs into paired structured-JSON and plain-text
tuning datasets, parses and validates model completions against
output-control schemas, scores predictions, and runs prompt- and
label-robustness evaluations against any completion endpoint.
"""

from .builder import (
    BuildConfig,
    EncodedExample,
    build_example,
    build_input_structure,
    build_output_structure,
    build_text_pair,
    render_control_text,
)
from .core import (
    ControlSchema,
    JsonNode,
    LabelSpace,
    PromptTemplate,
    TaskInstance,
    TaskSpec,
    canonical_serialize,
    deep_equal,
    parse_node,
)
from .harness import (
    CompletionRequest,
    EvalReport,
    HttpBackend,
    MockBackend,
    OpenAIBackend,
    PromptSuiteResult,
    complete,
    echo_gold_backend,
    evaluate,
    run_prompt_suite,
    substitute_label_space,
)
from .metrics import (
    PRF,
    Entity,
    EventRecord,
    RelationTriplet,
    entity_f1,
    event_scores,
    exact_match,
    execution_accuracy,
    relation_f1,
    structures_from_output,
)
from .parsing import (
    ParseOutcome,
    ValidationReport,
    check_label,
    extract_text_answer,
    parse_model_output,
    validate,
)
from .taskio import (
    DatasetManifest,
    SourceQuota,
    SpecError,
    emit_jsonl,
    load_instances,
    load_task_spec,
    read_jsonl,
    sample_mixture,
)
from .templates import (
    TemplateTokens,
    assemble_instruction,
    parse_template,
    placeholder_names,
    substitute,
)

__version__ = "0.1.0"
