#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use musicagent_core::clock::SteppingClock;
use musicagent_core::executor::{Executor, ExecutorConfig, ResourceLedger};
use musicagent_core::media::SegmentLimit;
use musicagent_core::registry::{AdapterKind, ToolDescriptor, ToolRegistry};
use musicagent_core::store::ArtifactStore;
use musicagent_core::taxonomy::{Modality, TaskCategory, TaskRegistry, TaskSpec};

pub fn store(dir: &std::path::Path) -> ArtifactStore {
    ArtifactStore::new(dir.join("artifacts"), SegmentLimit::default(), Arc::new(SteppingClock::epoch()))
}

pub fn executor(parallelism: usize, timeout: Duration) -> Executor {
    Executor::new(
        ExecutorConfig { parallelism, timeout },
        Arc::new(ResourceLedger::new(16, Duration::from_secs(5))),
    )
}

pub fn render_preview_spec() -> TaskSpec {
    TaskSpec::new(
        "render-preview",
        Modality::SymbolicMusic,
        Modality::Audio,
        TaskCategory::Auxiliary,
        "Render a symbolic score to a short audio preview.",
    )
}

/// Seed registries plus `render-preview` with a builtin tool.
pub fn registries() -> (TaskRegistry, ToolRegistry) {
    let mut tasks = TaskRegistry::seeded();
    tasks.register(render_preview_spec(), false).unwrap();
    let mut tools = ToolRegistry::seeded(&tasks);
    tools
        .register_tool(
            ToolDescriptor::new("preview-synth", &["render-preview"], AdapterKind::Builtin).with_cost(1),
            &tasks,
        )
        .unwrap();
    (tasks, tools)
}
