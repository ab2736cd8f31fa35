//! Single-session chat loop over any line reader and writer.

use std::io::{self, BufRead, Write};

use musicagent_core::agent::{ChatResult, MusicAgent, FLOW_PREFIX};
use musicagent_core::executor::{EventKind, ExecutionEvent};
use musicagent_core::planner::{ArgValue, SubTask};
use musicagent_core::responder::TurnRole;

pub const HELP: &str = "commands: /tasks /tools /history /clear /flow <json> /help /quit";

/// What one input line did.
#[derive(Debug)]
pub enum Outcome {
    /// The line went through the chat pipeline.
    Chat(Box<ChatResult>),
    /// A local command ran, or the chat failed and the error was printed.
    Handled,
    Quit,
}

pub struct Repl<'a> {
    agent: &'a MusicAgent,
    session_id: String,
}

impl<'a> Repl<'a> {
    pub fn new(agent: &'a MusicAgent, session_id: impl Into<String>) -> Self {
        Self {
            agent,
            session_id: session_id.into(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    /// Read lines until EOF or `/quit`. Errors are printed and the loop
    /// continues; only I/O failures on the streams end it early.
    pub fn run<R: BufRead, W: Write>(&mut self, input: R, out: &mut W, prompt: bool) -> io::Result<()> {
        if prompt {
            write!(out, "> ")?;
            out.flush()?;
        }
        for line in input.lines() {
            if let Outcome::Quit = self.handle_line(&line?, out)? {
                break;
            }
            if prompt {
                write!(out, "> ")?;
                out.flush()?;
            }
        }
        Ok(())
    }

    pub fn handle_line<W: Write>(&mut self, line: &str, out: &mut W) -> io::Result<Outcome> {
        let line = line.trim();
        if line.is_empty() {
            return Ok(Outcome::Handled);
        }
        let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        match cmd {
            "/quit" | "/exit" => return Ok(Outcome::Quit),
            "/help" => writeln!(out, "{HELP}")?,
            "/tasks" => {
                for t in self.agent.tasks() {
                    writeln!(out, "{:<28} {:>8} -> {:<8} {}", t.name, t.input.as_str(), t.output.as_str(), t.category)?;
                }
            }
            "/tools" => {
                for t in self.agent.tools() {
                    writeln!(
                        out,
                        "{:<22} {:<8} cost {:<2} {}",
                        t.id,
                        t.adapter.kind_name(),
                        t.resource_cost,
                        t.tasks.iter().map(String::as_str).collect::<Vec<_>>().join(", ")
                    )?;
                }
            }
            "/history" => match self.agent.session_view(&self.session_id) {
                Ok(view) => {
                    for turn in view.turns {
                        let who = match turn.role {
                            TurnRole::User => "you",
                            TurnRole::Agent => "agent",
                        };
                        writeln!(out, "{who}: {}", turn.text)?;
                    }
                }
                // No session yet means no history.
                Err(musicagent_core::agent::AgentError::UnknownSession(_)) => {}
                Err(e) => writeln!(out, "error: {e}")?,
            },
            "/clear" => match self.agent.clear_history(&self.session_id) {
                Ok(()) | Err(musicagent_core::agent::AgentError::UnknownSession(_)) => writeln!(out, "history cleared")?,
                Err(e) => writeln!(out, "error: {e}")?,
            },
            FLOW_PREFIX => {
                if rest.trim().is_empty() {
                    writeln!(out, "usage: /flow <json plan>")?;
                    return Ok(Outcome::Handled);
                }
                return self.chat(line, out);
            }
            c if c.starts_with('/') => writeln!(out, "unknown command {c}; {HELP}")?,
            _ => return self.chat(line, out),
        }
        Ok(Outcome::Handled)
    }

    fn chat<W: Write>(&mut self, text: &str, out: &mut W) -> io::Result<Outcome> {
        match self.agent.chat(Some(&self.session_id), text) {
            Ok(result) => {
                print_result(&result, out)?;
                Ok(Outcome::Chat(Box::new(result)))
            }
            Err(e) => {
                writeln!(out, "error: {e}")?;
                Ok(Outcome::Handled)
            }
        }
    }
}

fn describe_arg(v: &ArgValue) -> String {
    match v {
        ArgValue::Literal(s) if s.chars().count() > 40 => format!("{:?}", s.chars().take(40).collect::<String>() + "..."),
        ArgValue::Literal(s) => format!("{s:?}"),
        ArgValue::ArtifactRef(id) => id.to_string(),
        ArgValue::TaskOutputRef { task, output: None } => format!("<{task}>"),
        ArgValue::TaskOutputRef { task, output: Some(o) } => format!("<{task}.{o}>"),
    }
}

fn plan_line(st: &SubTask) -> String {
    let args: Vec<String> = st.args.iter().map(|(k, v)| format!("{k}={}", describe_arg(v))).collect();
    format!("  {} {}({})", st.id, st.task, args.join(", "))
}

fn progress_line(e: &ExecutionEvent) -> String {
    let mut line = format!("  [{}] {}", e.subtask, serde_json::to_value(e.event).expect("event kind").as_str().unwrap_or("?"));
    if let Some(tool) = &e.tool {
        line.push_str(&format!(" via {tool}"));
    }
    if !e.artifacts.is_empty() {
        let ids: Vec<&str> = e.artifacts.iter().map(|a| a.as_str()).collect();
        line.push_str(&format!(" -> {}", ids.join(", ")));
    }
    if let Some(f) = &e.failure {
        line.push_str(&format!(": {}: {}", f.class, f.message));
    }
    line
}

/// Plan summary, progress lines, response, then artifact locations.
pub fn print_result<W: Write>(r: &ChatResult, out: &mut W) -> io::Result<()> {
    if let Some(err) = &r.error {
        writeln!(out, "error: {err}")?;
    }
    if !r.plan.is_empty() {
        writeln!(out, "plan {} ({} subtasks):", r.plan.request_id, r.plan.len())?;
        for st in &r.plan.subtasks {
            writeln!(out, "{}", plan_line(st))?;
        }
    }
    for e in r.trace.iter().filter(|e| e.event != EventKind::Ready) {
        writeln!(out, "{}", progress_line(e))?;
    }
    if r.degraded {
        writeln!(out, "(degraded: the language model was unavailable)")?;
    }
    writeln!(out, "{}", r.response)?;
    if !r.artifacts.is_empty() {
        writeln!(out, "artifacts:")?;
        for a in &r.artifacts {
            let location = a.path.clone().unwrap_or_else(|| a.url.clone());
            writeln!(out, "  {} {} {}", a.id, a.modality, location)?;
        }
    }
    Ok(())
}
