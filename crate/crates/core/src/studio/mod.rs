//! One entry point for every operation: workspace edits, friends and
//! compile, with telemetry.

mod command;

use std::sync::Arc;

use thiserror::Error;

pub use command::{Command, Outcome};

use crate::compiler::{compile, CompileContext, CompileError};
use crate::engine::Engine;
use crate::error::WorkspaceError;
use crate::friends::{self, Catalog, FriendError, Surface, TemplateRegistry, DEFAULT_VARIANTS, VARIANTS};
use crate::gateway::broadcast::Applied;
use crate::gateway::{Broadcaster, Delivery, Gateway, GenerationRequest, RequestTarget, ResultStatus};
use crate::ids::*;
use crate::layer::{Layer, LayerKind, Origin};
use crate::persist::PersistError;
use crate::prompt::{compose, ComposeInput, ComposeOptions, PromptError, TaskKnowledge, TaskRegistry};
use crate::telemetry::{Clock, EventKind, SystemClock, Telemetry};
use crate::workspace::Workspace;

#[derive(Debug, Error)]
pub enum StrataError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Friend(#[from] FriendError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("{request} {status:?}: {error}")]
    Generation {
        request: RequestId,
        status: ResultStatus,
        error: String,
    },
    #[error("{request} was archived: {reason}")]
    Archived { request: RequestId, reason: String },
}

impl From<CompileError> for StrataError {
    fn from(e: CompileError) -> Self {
        match e {
            CompileError::Workspace(e) => StrataError::Workspace(e),
            CompileError::Prompt(e) => StrataError::Prompt(e),
            CompileError::Generation { task, status, error } => StrataError::Generation {
                request: RequestId(0),
                status,
                error: format!("{task}: {error}"),
            },
        }
    }
}

impl StrataError {
    pub fn code(&self) -> &'static str {
        match self {
            StrataError::Workspace(e) => e.code(),
            StrataError::Prompt(e) => e.code(),
            StrataError::Friend(e) => e.code(),
            StrataError::Persist(e) => e.code(),
            StrataError::Generation { status, .. } => match status {
                ResultStatus::SchemaInvalid => "schema-invalid",
                ResultStatus::Timeout => "timeout",
                ResultStatus::Cancelled => "cancelled",
                _ => "backend-error",
            },
            StrataError::Archived { .. } => "archived",
        }
    }
}

type Result<T> = std::result::Result<T, StrataError>;

/// A live workspace with its generation pipeline. Cheap to clone.
#[derive(Clone)]
pub struct Studio {
    broadcaster: Arc<Broadcaster>,
    tasks: Arc<TaskRegistry>,
    templates: Arc<TemplateRegistry>,
    catalog: Arc<Catalog>,
    options: ComposeOptions,
    clock: Arc<dyn Clock>,
    telemetry: Option<Telemetry>,
}

impl Studio {
    pub fn new(workspace: Workspace, gateway: Gateway) -> Self {
        Self::with_engine(Engine::new(workspace), gateway)
    }

    pub fn with_engine(engine: Engine, gateway: Gateway) -> Self {
        Studio {
            broadcaster: Arc::new(Broadcaster::new(engine, gateway)),
            tasks: Arc::new(TaskRegistry::builtin()),
            templates: Arc::new(TemplateRegistry::builtin()),
            catalog: Arc::new(Catalog::builtin()),
            options: ComposeOptions::default(),
            clock: Arc::new(SystemClock),
            telemetry: None,
        }
    }

    /// Log invocations, prompts, errors and human edits to `telemetry`.
    pub fn with_telemetry(mut self, telemetry: Telemetry) -> Self {
        self.engine().add_observer(telemetry.observer());
        self.telemetry = Some(telemetry);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_tasks(mut self, tasks: TaskRegistry) -> Self {
        self.tasks = Arc::new(tasks);
        self
    }

    pub fn with_templates(mut self, templates: TemplateRegistry) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    pub fn with_options(mut self, options: ComposeOptions) -> Self {
        self.options = options;
        self
    }

    pub fn engine(&self) -> &Engine {
        self.broadcaster.engine()
    }

    pub fn broadcaster(&self) -> &Broadcaster {
        &self.broadcaster
    }

    pub fn snapshot(&self) -> Arc<Workspace> {
        self.engine().snapshot()
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn tasks(&self) -> &TaskRegistry {
        &self.tasks
    }

    pub fn templates(&self) -> &TemplateRegistry {
        &self.templates
    }

    pub fn telemetry(&self) -> Option<&Telemetry> {
        self.telemetry.as_ref()
    }

    /// Run one operation.
    pub async fn execute(&self, cmd: Command) -> Result<Outcome> {
        if let Some(t) = &self.telemetry {
            if !matches!(cmd, Command::ApplyEdit { .. }) && !cmd.is_read_only() {
                let kind = match cmd {
                    Command::Compile { .. } => EventKind::Compile,
                    _ => EventKind::FeatureInvocation,
                };
                t.log(kind, cmd.op(), serde_json::json!({ "op": cmd.op() }));
            }
            if let Some(p) = cmd.user_prompt() {
                t.log(EventKind::UserPrompt, cmd.op(), serde_json::json!({ "text": p }));
            }
        }
        let op = cmd.op();
        let out = self.run(cmd).await;
        if let (Err(e), Some(t)) = (&out, &self.telemetry) {
            t.log(
                EventKind::Error,
                op,
                serde_json::json!({ "code": e.code(), "message": e.to_string() }),
            );
        }
        out
    }

    async fn mutate<T, F>(&self, f: F) -> Result<T>
    where
        T: Send + 'static,
        F: FnOnce(&mut Workspace) -> std::result::Result<T, WorkspaceError> + Send + 'static,
    {
        Ok(self.engine().mutate_async(f).await?)
    }

    async fn run(&self, cmd: Command) -> Result<Outcome> {
        use Command::*;
        Ok(match cmd {
            NewWritingLayer { name, blocks } => Outcome::Layer {
                layer: self.mutate(move |w| w.new_writing_layer(&name, blocks)).await?,
            },
            NewScratchpad { name } => Outcome::Layer {
                layer: self.mutate(move |w| w.new_scratchpad(&name)).await?,
            },
            ApplyEdit { layer, edit } => {
                let o = self.mutate(move |w| w.apply_edit(layer, &edit)).await?;
                Outcome::Edited {
                    block: o.block,
                    words_inserted: o.words_inserted,
                    chars_removed: o.chars_removed,
                }
            }
            ResolvePlaceholder {
                placeholder,
                resolution,
            } => {
                self.mutate(move |w| w.resolve_placeholder(placeholder, resolution)).await?;
                Outcome::Done
            }
            CancelGeneration { placeholder } => {
                self.snapshot().placeholder(placeholder)?;
                Outcome::Cancelled {
                    cancelled: self.broadcaster.cancel_placeholder(placeholder),
                }
            }
            UpdateMeta { update } => {
                self.mutate(move |w| {
                    w.update_meta(update);
                    Ok(())
                })
                .await?;
                Outcome::Done
            }
            AttachReference { title, text } => Outcome::Doc {
                doc: self.mutate(move |w| w.attach_reference(&title, text)).await?,
            },
            BinLayer { layer } => {
                self.mutate(move |w| w.bin_layer(layer)).await?;
                Outcome::Done
            }
            RestoreLayer { layer } => {
                self.mutate(move |w| w.restore_layer(layer)).await?;
                Outcome::Done
            }
            MoveLayer { layer, placement } => Outcome::Adjacencies {
                adjacencies: self.mutate(move |w| w.move_layer(layer, placement)).await?,
            },
            MoveGroup { group, x, y } => {
                self.mutate(move |w| w.move_group(group, x, y)).await?;
                Outcome::Done
            }
            Stack { members } => Outcome::Group {
                group: self.mutate(move |w| w.stack(&members)).await?,
            },
            Cluster { members } => Outcome::Group {
                group: self.mutate(move |w| w.cluster(&members)).await?,
            },
            Ungroup { group } => {
                self.mutate(move |w| w.ungroup(group)).await?;
                Outcome::Done
            }
            ReorderStack { group, permutation } => {
                self.mutate(move |w| w.reorder_stack(group, &permutation)).await?;
                Outcome::Group { group }
            }
            Fan { group } => {
                self.mutate(move |w| w.set_fanned(group, true)).await?;
                Outcome::Group { group }
            }
            Unfan { group } => {
                self.mutate(move |w| w.set_fanned(group, false)).await?;
                Outcome::Group { group }
            }
            Fold { layer } => self.fold(layer).await?,
            Unfold { layer } => {
                self.mutate(move |w| w.unfold(layer)).await?;
                Outcome::Layer { layer }
            }
            Tear { layer, cuts } => Outcome::Layers {
                layers: self.mutate(move |w| w.tear(layer, &cuts)).await?,
            },
            Combine {
                top,
                bottom,
                transition_prompt,
            } => self.combine(top, bottom, transition_prompt).await?,
            CreateSublayer {
                parent,
                block,
                range,
                name,
            } => Outcome::Layer {
                layer: self
                    .mutate(move |w| w.create_sublayer(parent, block, range, &name))
                    .await?,
            },
            Tunnel {
                current,
                target,
                cursor,
            } => Outcome::Tunnel {
                view: self.snapshot().tunnel(current, target, cursor)?,
            },
            ImportSelection {
                current,
                cursor,
                selection,
            } => Outcome::Block {
                block: self
                    .mutate(move |w| w.import_selection(current, cursor, selection))
                    .await?,
            },
            Compare {
                left,
                right,
                instruction,
            } => self.compare(left, right, instruction).await?,
            CloseComparison { session } => {
                self.mutate(move |w| w.close_comparison(session)).await?;
                Outcome::Done
            }
            Tag { target, label } => {
                self.mutate(move |w| w.tag(target, &label)).await?;
                Outcome::Done
            }
            Untag { target, label } => {
                self.mutate(move |w| w.untag(target, &label)).await?;
                Outcome::Done
            }
            Subscribe { layer } => Outcome::Subscription {
                subscription: self.mutate(move |w| w.subscribe(layer)).await?,
            },
            Unsubscribe { subscription } => {
                self.mutate(move |w| w.unsubscribe(subscription)).await?;
                Outcome::Done
            }
            InvokeInline {
                layer,
                block,
                offset,
                friend,
                prompt,
                new_block,
            } => self.invoke_inline(layer, block, offset, &friend, &prompt, new_block).await?,
            Peek { layer } => self.peek(layer).await?,
            AcceptPreview { preview } => Outcome::Block {
                block: self.mutate(move |w| w.accept_preview(preview)).await?,
            },
            DismissPreview { preview } => {
                self.mutate(move |w| w.dismiss_preview(preview)).await?;
                Outcome::Done
            }
            Restructure { layer } => self.restructure(layer).await?,
            ToneVariants { layer, instruction, n } => self.tone_variants(layer, &instruction, n).await?,
            Annotate { layer, persona, prompt } => self.annotate(layer, &persona, prompt.as_deref()).await?,
            ToggleAnnotations { layer, visible } => Outcome::Count {
                count: self.mutate(move |w| w.toggle_annotations(layer, visible)).await?,
            },
            Research { scratchpad, question } => self.research(scratchpad, &question).await?,
            ApplyTemplate { template, layer } => self.apply_template(&template, layer).await?,
            Compile { spec } => {
                let cx = CompileContext {
                    broadcaster: &self.broadcaster,
                    tasks: &self.tasks,
                    options: self.options.clone(),
                    now_ms: self.clock.now_ms(),
                };
                let layer = compile(&cx, &spec).await?;
                let snap = self.snapshot();
                let content = snap.layer(layer)?.document().cloned().unwrap_or_default();
                Outcome::Document {
                    layer,
                    content: Box::new(content),
                }
            }
            Traceback { document, address } => Outcome::Traceback {
                traceback: self.snapshot().traceback(document, address)?,
            },
            Adjacencies { layer } => {
                let snap = self.snapshot();
                snap.layer(layer)?;
                Outcome::Adjacencies {
                    adjacencies: snap.adjacencies_of(layer),
                }
            }
        })
    }

    // ---- generation plumbing ------------------------------------------------

    fn request(&self, task: &TaskKnowledge, origin: LayerId, input: &ComposeInput<'_>) -> Result<GenerationRequest> {
        let prompt = compose(task, input, &self.options)?;
        Ok(GenerationRequest {
            id: self.broadcaster.next_request_id(),
            origin: (origin, task.id.clone()),
            prompt,
            issued_at_ms: self.clock.now_ms(),
        })
    }

    async fn deliver(&self, request: GenerationRequest, target: RequestTarget) -> Result<Applied> {
        let id = request.id;
        match self.broadcaster.dispatch(request, target).await {
            Delivery::Applied { applied, .. } => Ok(applied),
            Delivery::Archived { request, reason } => Err(StrataError::Archived { request, reason }),
            Delivery::Failed { request, status, error } => Err(StrataError::Generation { request, status, error }),
            other => Err(StrataError::Generation {
                request: id,
                status: ResultStatus::BackendError,
                error: format!("unexpected delivery {other:?}"),
            }),
        }
    }

    fn layers(snap: &Workspace, ids: &[LayerId]) -> Result<Vec<Layer>> {
        ids.iter().map(|id| Ok(snap.layer(*id)?.clone())).collect()
    }

    /// A writing layer with some text in it.
    fn non_empty(snap: &Workspace, layer: LayerId) -> Result<Layer> {
        let l = snap.writing_layer(layer)?;
        if snap.is_binned(layer) {
            return Err(WorkspaceError::Binned(layer).into());
        }
        if l.folded {
            return Err(WorkspaceError::FoldedInput(layer).into());
        }
        if !l.has_text() {
            return Err(WorkspaceError::EmptyLayer(layer).into());
        }
        Ok(l.clone())
    }

    async fn invoke_inline(
        &self,
        layer: LayerId,
        block: BlockId,
        offset: usize,
        friend: &str,
        prompt: &str,
        new_block: bool,
    ) -> Result<Outcome> {
        let f = self.catalog.for_surface(friend, Surface::InlineSlash)?.clone();
        let task = self.tasks.lookup(f.task.as_str())?;
        let snap = self.snapshot();
        let l = snap.writing_layer(layer)?.clone();
        let excerpts = snap.cross_context.get(&layer).cloned().unwrap_or_default();
        let ls = [l];
        let mut input = ComposeInput::new(&snap.meta, &ls);
        input.anchor = Some((block, offset));
        input.user_prompt = prompt;
        input.cross_context = &excerpts;
        let req = self.request(task, layer, &input)?;
        let (rid, task_id, origin) = (req.id, task.id.clone(), Origin::Friend(f.id.clone()));
        let placeholder = self
            .mutate(move |w| {
                let p = w.open_placeholder(layer, block, offset, new_block, task_id, origin)?;
                w.take_cross_context(layer);
                w.placeholders.get_mut(&p).expect("just opened").request = Some(rid);
                Ok(p)
            })
            .await?;
        self.deliver(req, RequestTarget::Placeholder { layer, placeholder }).await?;
        Ok(Outcome::Placeholder {
            placeholder,
            request: rid,
        })
    }

    async fn peek(&self, layer: LayerId) -> Result<Outcome> {
        let snap = self.snapshot();
        let ls = [Self::non_empty(&snap, layer)?];
        let task = self.tasks.lookup("peek-continuation")?;
        let req = self.request(task, layer, &ComposeInput::new(&snap.meta, &ls))?;
        match self.deliver(req, RequestTarget::Preview { layer }).await? {
            Applied::Preview { preview } => Ok(Outcome::Preview {
                preview,
                text: self.snapshot().preview(preview)?.text.clone(),
            }),
            other => Err(unexpected(other)),
        }
    }

    async fn restructure(&self, layer: LayerId) -> Result<Outcome> {
        let snap = self.snapshot();
        let ls = [Self::non_empty(&snap, layer)?];
        let task = self.tasks.lookup("restructure")?;
        let req = self.request(task, layer, &ComposeInput::new(&snap.meta, &ls))?;
        let name = format!("{} (structured)", ls[0].name);
        let target = RequestTarget::Sections {
            origin: layer,
            name,
            friend: FriendId::new(friends::SAM),
        };
        layers_of(self.deliver(req, target).await?)
    }

    async fn tone_variants(&self, layer: LayerId, instruction: &str, n: Option<usize>) -> Result<Outcome> {
        let n = n.unwrap_or(DEFAULT_VARIANTS);
        if !(VARIANTS.0..=VARIANTS.1).contains(&n) {
            return Err(FriendError::OutOfRange {
                what: "variant count",
                min: VARIANTS.0,
                max: VARIANTS.1,
                got: n,
            }
            .into());
        }
        let snap = self.snapshot();
        let ls = [Self::non_empty(&snap, layer)?];
        let task = self.tasks.lookup("tone-variants")?;
        let names: Vec<String> = (1..=n).map(|k| format!("{} — variant {k}", ls[0].name)).collect();
        let mut input = ComposeInput::new(&snap.meta, &ls);
        input.user_prompt = instruction;
        input.new_layers = Some(n);
        input.names = Some(names.clone());
        let req = self.request(task, layer, &input)?;
        let target = RequestTarget::NewLayers {
            origin: layer,
            names,
            friend: FriendId::new(friends::TARA),
            tag: None,
        };
        layers_of(self.deliver(req, target).await?)
    }

    async fn annotate(&self, layer: LayerId, persona: &str, prompt: Option<&str>) -> Result<Outcome> {
        let f = self.catalog.for_surface(persona, Surface::LayerToolbar)?;
        if f.id.as_str() != friends::FELIX && f.id.as_str() != friends::ALI {
            return Err(FriendError::UnknownFriend(persona.to_string()).into());
        }
        let snap = self.snapshot();
        if f.id.as_str() == friends::ALI && snap.meta.audience.trim().is_empty() {
            return Err(FriendError::AudienceRequired.into());
        }
        let ls = [Self::non_empty(&snap, layer)?];
        let task = self.tasks.lookup(f.task.as_str())?;
        let mut input = ComposeInput::new(&snap.meta, &ls);
        input.user_prompt = prompt.unwrap_or("");
        let req = self.request(task, layer, &input)?;
        let target = RequestTarget::Feedback {
            layer,
            persona: f.id.clone(),
        };
        match self.deliver(req, target).await? {
            Applied::Annotations { annotations } => Ok(Outcome::Annotations { annotations }),
            other => Err(unexpected(other)),
        }
    }

    async fn research(&self, scratchpad: LayerId, question: &str) -> Result<Outcome> {
        if question.trim().is_empty() {
            return Err(PromptError::BadParameter("question must not be empty".into()).into());
        }
        let snap = self.snapshot();
        let l = snap.layer(scratchpad)?;
        if l.kind() != LayerKind::Scratchpad {
            return Err(WorkspaceError::TypeMismatch {
                layer: scratchpad,
                actual: l.kind(),
                expected: LayerKind::Scratchpad,
            }
            .into());
        }
        let ls = [l.clone()];
        let task = self.tasks.lookup("research")?;
        let mut input = ComposeInput::new(&snap.meta, &ls);
        input.user_prompt = question;
        let req = self.request(task, scratchpad, &input)?;
        let target = RequestTarget::Scratchpad {
            layer: scratchpad,
            question: question.trim().to_string(),
            grounded: !snap.meta.external_references.is_empty(),
        };
        match self.deliver(req, target).await? {
            Applied::Entry { layer, entry } => Ok(Outcome::Entry { layer, entry }),
            other => Err(unexpected(other)),
        }
    }

    async fn apply_template(&self, template: &str, layer: LayerId) -> Result<Outcome> {
        let t = self.templates.get(template)?.clone();
        let snap = self.snapshot();
        let ls = [Self::non_empty(&snap, layer)?];
        let task = t.task();
        let mut input = ComposeInput::new(&snap.meta, &ls);
        input.new_layers = Some(t.components.len());
        input.names = Some(t.components.clone());
        let req = self.request(&task, layer, &input)?;
        let target = RequestTarget::NewLayers {
            origin: layer,
            names: t.components.clone(),
            friend: FriendId::new(friends::TEMPLATE),
            tag: Some(t.id.clone()),
        };
        layers_of(self.deliver(req, target).await?)
    }

    async fn compare(&self, left: LayerId, right: LayerId, instruction: String) -> Result<Outcome> {
        let snap = self.snapshot();
        if left == right {
            return Err(WorkspaceError::SameLayer.into());
        }
        if !snap.adjacent(left, right) {
            return Err(WorkspaceError::NotAdjacent { left, right }.into());
        }
        let ls = Self::layers(&snap, &[left, right])?;
        let task = self.tasks.lookup("compare")?;
        let mut input = ComposeInput::new(&snap.meta, &ls);
        input.user_prompt = &instruction;
        let req = self.request(task, left, &input)?;
        let target = RequestTarget::Comparison {
            left,
            right,
            instruction: instruction.clone(),
        };
        match self.deliver(req, target).await? {
            Applied::Comparison { session } => Ok(Outcome::Comparison { session }),
            other => Err(unexpected(other)),
        }
    }

    async fn fold(&self, layer: LayerId) -> Result<Outcome> {
        let snap = self.snapshot();
        if let Some(summary) = snap.cached_fold_summary(layer)? {
            self.mutate(move |w| w.fold(layer, summary)).await?;
            return Ok(Outcome::Layer { layer });
        }
        let l = snap.layer(layer)?;
        if l.kind() == LayerKind::Document {
            return Err(WorkspaceError::TypeMismatch {
                layer,
                actual: LayerKind::Document,
                expected: LayerKind::Writing,
            }
            .into());
        }
        let ls = [l.clone()];
        let task = self.tasks.lookup("summarize-folded")?;
        let req = self.request(task, layer, &ComposeInput::new(&snap.meta, &ls))?;
        self.deliver(req, RequestTarget::FoldSummary { layer }).await?;
        Ok(Outcome::Layer { layer })
    }

    async fn combine(&self, top: LayerId, bottom: LayerId, prompt: Option<String>) -> Result<Outcome> {
        let prompt = prompt.filter(|p| !p.trim().is_empty());
        let Some(prompt) = prompt else {
            let (layer, _) = self.mutate(move |w| w.combine(top, bottom)).await?;
            return Ok(Outcome::Combined { layer, transition: None });
        };
        let snap = self.snapshot();
        let ls = Self::layers(&snap, &[top, bottom])?;
        let task = self.tasks.lookup("transition")?;
        let Some(last) = ls[0].view_blocks().last().map(|b| (b.id, b.char_len())) else {
            return Err(WorkspaceError::EmptyLayer(top).into());
        };
        let mut input = ComposeInput::new(&snap.meta, &ls);
        input.anchor = Some(last);
        input.user_prompt = &prompt;
        let req = self.request(task, top, &input)?;
        let (rid, task_id) = (req.id, task.id.clone());
        let (layer, placeholder) = self
            .mutate(move |w| {
                let (id, split) = w.combine(top, bottom)?;
                let anchor = w.writing_layer(id)?.writing().expect("writing").blocks[split - 1].id;
                let p = w.open_placeholder(id, anchor, 0, true, task_id, Origin::Transition)?;
                w.placeholders.get_mut(&p).expect("just opened").request = Some(rid);
                Ok((id, p))
            })
            .await?;
        self.deliver(req, RequestTarget::Placeholder { layer, placeholder }).await?;
        Ok(Outcome::Combined {
            layer,
            transition: Some(placeholder),
        })
    }
}

fn unexpected(a: Applied) -> StrataError {
    StrataError::Generation {
        request: RequestId(0),
        status: ResultStatus::SchemaInvalid,
        error: format!("unexpected application {a:?}"),
    }
}

fn layers_of(a: Applied) -> Result<Outcome> {
    match a {
        Applied::Layers { layers } => Ok(Outcome::Layers { layers }),
        other => Err(unexpected(other)),
    }
}
