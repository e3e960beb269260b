use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use super::ShmmModel;
use crate::emission::{EmissionConfig, StateParams};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT_NAME: &str = "shmm-model";

#[derive(Serialize, Deserialize)]
struct ModelDocument<M> {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: M,
}

#[derive(Serialize)]
struct BodyRef<'a> {
    n_states: usize,
    embedding_dim: usize,
    config: &'a EmissionConfig,
    pi: &'a [f64],
    trans: &'a [Vec<f64>],
    states: &'a [StateParams],
}

/// Pretty JSON with every float written to 17 significant digits.
struct FullPrecision(PrettyFormatter<'static>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    );
}

pub fn model_to_json(model: &ShmmModel) -> Result<String> {
    let doc = ModelDocument {
        format: MODEL_FORMAT_NAME.to_string(),
        version: MODEL_FORMAT_VERSION,
        body: BodyRef {
            n_states: model.n_states,
            embedding_dim: model.embedding_dim,
            config: &model.config,
            pi: &model.pi,
            trans: &model.trans,
            states: &model.states,
        },
    };
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FullPrecision(PrettyFormatter::new()));
    doc.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

fn check_header(format: &str, version: u32) -> Result<()> {
    if format != MODEL_FORMAT_NAME {
        return Err(Error::Config(format!("not a model document (format '{format}')")));
    }
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Config(format!("unsupported model format version {version}")));
    }
    Ok(())
}

pub fn model_from_json(text: &str) -> Result<ShmmModel> {
    let doc: ModelDocument<ShmmModel> = serde_json::from_str(text)?;
    check_header(&doc.format, doc.version)?;
    doc.body.validate()?;
    Ok(doc.body)
}

pub fn save_model(model: &ShmmModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(model_to_json(model)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ShmmModel> {
    let doc: ModelDocument<ShmmModel> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    check_header(&doc.format, doc.version)?;
    doc.body.validate()?;
    Ok(doc.body)
}
