//! Line-delimited JSON run log. Every command appends events (effective
//! config, per-step losses, warnings, timings) to `run.jsonl` in its
//! output directory; stdout stays reserved for the command's own results.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::{json, Value};

pub struct RunLog {
    sink: Option<BufWriter<File>>,
    started: Instant,
}

impl RunLog {
    /// Creates `run.jsonl` inside `dir`, or a no-op log when no output
    /// directory applies to the command.
    pub fn create(dir: Option<&Path>) -> Result<RunLog> {
        let sink = match dir {
            Some(d) => {
                std::fs::create_dir_all(d)
                    .with_context(|| format!("creating output directory {}", d.display()))?;
                let path = d.join("run.jsonl");
                let file = File::create(&path)
                    .with_context(|| format!("creating {}", path.display()))?;
                Some(BufWriter::new(file))
            }
            None => None,
        };
        Ok(RunLog { sink, started: Instant::now() })
    }

    /// Appends one event; `fields` must be a JSON object. A `t` key with
    /// seconds since command start is added to every line.
    pub fn event(&mut self, kind: &str, mut fields: Value) {
        if let Some(sink) = &mut self.sink {
            let obj = fields.as_object_mut().expect("event fields must be an object");
            obj.insert("event".into(), json!(kind));
            obj.insert("t".into(), json!(self.started.elapsed().as_secs_f64()));
            // log failures must not take the pipeline down
            if writeln!(sink, "{}", Value::Object(obj.clone())).is_err() {
                log::warn!("run log write failed; further events may be lost");
            }
        }
    }

    pub fn warn(&mut self, message: &str) {
        log::warn!("{}", message);
        self.event("warning", json!({ "message": message }));
    }

    pub fn finish(mut self) {
        self.event("done", json!({}));
        if let Some(sink) = &mut self.sink {
            let _ = sink.flush();
        }
    }
}
