//! Text protocol shared by prompts, training labels and model answers.
//!
//! Numbers go out as plain decimals with exactly two fractional digits. Model
//! answers are read leniently: an optional ```` ```json ```` fence and
//! surrounding prose are skipped, the first balanced JSON value is parsed, and
//! boxes are accepted under either `"bbox_3d"` or `"box_3d"`. Any decimal
//! precision is accepted on input.
//!
//! Grammar of an answer payload:
//!
//! ```text
//! grounding := { "frame": <uint>, ("bbox_3d" | "box_3d"): <box> }
//! detection := [ { "label": <string>, ("bbox_3d" | "box_3d"): <box> }, ... ]
//! box       := [ x, y, z, w, h, d, yaw, pitch, roll ]      (9 numbers)
//! ```

use serde_json::Value;

use crate::error::{Error, ParseError, Result};
use crate::geometry::OrientedBox3D;

/// Renders `x` with exactly two fractional digits, rounding half away from
/// zero on the shortest decimal representation of `x`. Negative zero prints
/// as `0.00`.
pub fn format_number(x: f64) -> Result<String> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("cannot format non-finite number {x}")));
    }
    let repr = format!("{}", x.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((repr.as_str(), ""));
    let frac = frac_part.as_bytes();

    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    digits.push(frac.first().map_or(0, |b| b - b'0'));
    digits.push(frac.get(1).map_or(0, |b| b - b'0'));

    if frac.get(2).is_some_and(|&b| b >= b'5') {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }

    let negative = x < 0.0 && digits.iter().any(|&d| d != 0);
    let split = digits.len() - 2;
    let mut out = String::with_capacity(digits.len() + 2);
    if negative {
        out.push('-');
    }
    out.extend(digits[..split].iter().map(|&d| char::from(b'0' + d)));
    out.push('.');
    out.extend(digits[split..].iter().map(|&d| char::from(b'0' + d)));
    Ok(out)
}

/// The nine box numbers, each rendered by [`format_number`].
pub fn serialize_box(b: &OrientedBox3D) -> [String; 9] {
    // Valid boxes are finite, so formatting cannot fail.
    b.to_array().map(|v| format_number(v).expect("finite box component"))
}

/// `[x, y, z, w, h, d, yaw, pitch, roll]` as it appears in answers.
pub fn render_box(b: &OrientedBox3D) -> String {
    format!("[{}]", serialize_box(b).join(", "))
}

/// Grounding answer text in the fenced form the model is trained to emit.
pub fn render_grounding_answer(frame: usize, b: &OrientedBox3D) -> String {
    format!("```json\n{{\"frame\": {frame}, \"bbox_3d\": {}}}\n```", render_box(b))
}

/// Detection answer text, one entry per line.
pub fn render_detection_answer(items: &[DetectionItem]) -> String {
    let mut out = String::from("```json\n[\n");
    for (i, item) in items.iter().enumerate() {
        let label = serde_json::to_string(&item.label).expect("string serializes");
        out.push_str(&format!("    {{\"label\": {label}, \"bbox_3d\": {}}}", render_box(&item.bbox)));
        out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
    }
    out.push_str("]\n```");
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum PromptTask {
    Grounding { query: String },
    Captioning { center: [f64; 3] },
    Detection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptOptions {
    /// Stand-in for one frame's image tokens.
    pub image_token: String,
    pub num_frames: usize,
    /// Keep the `rolll` spelling of the reference template in the detection prompt.
    pub verbatim_box_format: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            image_token: "<image>".to_string(),
            num_frames: 4,
            verbatim_box_format: true,
        }
    }
}

pub fn build_prompt(task: &PromptTask, opts: &PromptOptions) -> Result<String> {
    if opts.num_frames == 0 {
        return Err(Error::invalid("prompt needs at least one frame"));
    }
    let images = opts.image_token.repeat(opts.num_frames);
    match task {
        PromptTask::Grounding { query } => {
            let query = query.trim();
            if query.is_empty() {
                return Err(Error::invalid("grounding prompt needs a non-empty query"));
            }
            let frames: String = (0..opts.num_frames)
                .map(|i| format!("Frame-{i}: {}", opts.image_token))
                .collect();
            Ok(format!(
                "{frames}\n\
                 Localize the first clear frame in the video showing the object described in the text.\n\
                 Text: {query}\n\
                 Output a JSON dictionary with the frame index in \"frame\" and its 3D bounding box in \"box_3d\" in the frame's coordinates."
            ))
        }
        PromptTask::Captioning { center } => {
            let coords = center.iter().map(|&v| format_number(v)).collect::<Result<Vec<_>>>()?;
            Ok(format!(
                "{images}\nCarefully watch the video and describe the object located at [{}] in detail.",
                coords.join(", ")
            ))
        }
        PromptTask::Detection => {
            let roll = if opts.verbatim_box_format { "rolll" } else { "roll" };
            Ok(format!(
                "{images}\n\
                 Detect the 3D bounding boxes in the camera coordinate system of the first frame.\n\
                 Output a json list where each entry contains the object name in \"label\" and its 3D bounding box in \"box_3d\".\n\
                 The 3D bounding box format should be [x_center, y_center, z_center, x_size, y_size, z_size, yaw, pitch, {roll}]."
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingResponse {
    pub frame: usize,
    /// Box in the camera coordinates of `frame`.
    pub bbox: OrientedBox3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionItem {
    pub label: String,
    pub bbox: OrientedBox3D,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionResponse {
    pub items: Vec<DetectionItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Malformed entries are dropped and reported as warnings.
    #[default]
    Lenient,
    /// The first malformed entry fails the whole response.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedDetections {
    pub response: DetectionResponse,
    pub warnings: Vec<ParseError>,
}

/// Returns the first balanced JSON value, looking inside a code fence when
/// one is present.
pub fn extract_json(text: &str) -> Result<Value, ParseError> {
    let mut body = text;
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        body = match after.find('\n') {
            Some(nl) => &after[nl + 1..],
            None => after.trim_start_matches("json"),
        };
    }
    let slice = balanced_json(body).ok_or(ParseError::NoJson)?;
    serde_json::from_str(slice).map_err(|e| ParseError::InvalidJson(e.to_string()))
}

fn balanced_json(text: &str) -> Option<&str> {
    let start = text.find(['{', '['])?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (off, b) in text.as_bytes()[start..].iter().enumerate() {
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + off + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn box_value(obj: &serde_json::Map<String, Value>) -> Result<&Value, ParseError> {
    obj.get("bbox_3d")
        .or_else(|| obj.get("box_3d"))
        .ok_or(ParseError::MissingKey("bbox_3d"))
}

fn parse_number(v: &Value) -> Option<f64> {
    let x = match v {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse().ok()?,
        _ => return None,
    };
    x.is_finite().then_some(x)
}

fn parse_box(v: &Value) -> Result<OrientedBox3D, ParseError> {
    let arr = match v {
        Value::Array(a) => a,
        _ => return Err(ParseError::Arity(0)),
    };
    if arr.len() != 9 {
        return Err(ParseError::Arity(arr.len()));
    }
    let mut nums = [0.0; 9];
    for (i, item) in arr.iter().enumerate() {
        nums[i] = parse_number(item).ok_or(ParseError::BadNumber { index: i })?;
    }
    OrientedBox3D::from_array(nums).map_err(|_| ParseError::NegativeSize)
}

fn parse_frame(v: &Value) -> Result<usize, ParseError> {
    if let Some(n) = v.as_u64() {
        return usize::try_from(n).map_err(|_| ParseError::BadFrame);
    }
    match parse_number(v) {
        Some(x) if x >= 0.0 && x.fract() == 0.0 && x < usize::MAX as f64 => Ok(x as usize),
        _ => Err(ParseError::BadFrame),
    }
}

pub fn parse_grounding_response(text: &str) -> Result<GroundingResponse, ParseError> {
    let value = extract_json(text)?;
    let obj = value.as_object().ok_or(ParseError::NotAnObject)?;
    let frame = parse_frame(obj.get("frame").ok_or(ParseError::MissingKey("frame"))?)?;
    let bbox = parse_box(box_value(obj)?)?;
    Ok(GroundingResponse { frame, bbox })
}

fn parse_detection_item(v: &Value) -> Result<DetectionItem, ParseError> {
    let obj = v.as_object().ok_or(ParseError::NotAnObject)?;
    let label = match obj.get("label") {
        None => return Err(ParseError::MissingKey("label")),
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        Some(_) => return Err(ParseError::BadLabel),
    };
    let bbox = parse_box(box_value(obj)?)?;
    Ok(DetectionItem { label, bbox })
}

/// Reads a detection answer, keeping entries in emitted order.
pub fn parse_detection_response(text: &str, mode: ParseMode) -> Result<ParsedDetections, ParseError> {
    let value = extract_json(text)?;
    let entries = value.as_array().ok_or(ParseError::NotAList)?;
    let mut parsed = ParsedDetections::default();
    for (index, entry) in entries.iter().enumerate() {
        match parse_detection_item(entry) {
            Ok(item) => parsed.response.items.push(item),
            Err(e) => {
                let err = ParseError::Entry { index, source: Box::new(e) };
                match mode {
                    ParseMode::Strict => return Err(err),
                    ParseMode::Lenient => parsed.warnings.push(err),
                }
            }
        }
    }
    Ok(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    const GROUNDING_SAMPLE: &str = "```json\n{\"frame\": 12, \"bbox_3d\": [-0.63, -0.83, 2.43, 3.0, 0.59, 2.35, -2.32, 1.18, 3.05]}\n```";
    const DETECTION_SAMPLE: &str = "```json\n[\n    {\"label\": \"bag\", \"bbox_3d\": [0.0, -0.3, 1.0, 0.26, 0.26, 0.15, 1.67, 0.96, -2.98]}\n]\n```";

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(0.0).unwrap(), "0.00");
        assert_eq!(format_number(-2.317).unwrap(), "-2.32");
        assert_eq!(format_number(2.43).unwrap(), "2.43");
        assert_eq!(format_number(1.005).unwrap(), "1.01");
        assert_eq!(format_number(-1.005).unwrap(), "-1.01");
        assert_eq!(format_number(-0.001).unwrap(), "0.00");
        assert_eq!(format_number(-0.0).unwrap(), "0.00");
        assert_eq!(format_number(9.995).unwrap(), "10.00");
        assert_eq!(format_number(99.999).unwrap(), "100.00");
        assert_eq!(format_number(3.0).unwrap(), "3.00");
        assert_eq!(format_number(1e-7).unwrap(), "0.00");
        assert_eq!(format_number(123456.784).unwrap(), "123456.78");
        assert!(format_number(f64::NAN).is_err());
        assert!(format_number(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn box_serialization() {
        let unit = OrientedBox3D::axis_aligned(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(
            serialize_box(&unit),
            ["0.00", "0.00", "0.00", "1.00", "1.00", "1.00", "0.00", "0.00", "0.00"].map(String::from)
        );
        let b = OrientedBox3D::axis_aligned(Vec3::new(1.005, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(serialize_box(&b)[0], "1.01");
    }

    #[test]
    fn captioning_prompt() {
        let p = build_prompt(&PromptTask::Captioning { center: [-0.89, -0.74, 2.45] }, &PromptOptions::default()).unwrap();
        assert!(p.ends_with("Carefully watch the video and describe the object located at [-0.89, -0.74, 2.45] in detail."));
        assert!(p.starts_with("<image><image><image><image>\n"));
    }

    #[test]
    fn detection_prompt_spelling() {
        let verbatim = build_prompt(&PromptTask::Detection, &PromptOptions::default()).unwrap();
        assert!(verbatim.contains(
            "The 3D bounding box format should be [x_center, y_center, z_center, x_size, y_size, z_size, yaw, pitch, rolll]."
        ));
        let fixed = build_prompt(
            &PromptTask::Detection,
            &PromptOptions { verbatim_box_format: false, ..Default::default() },
        )
        .unwrap();
        assert!(fixed.ends_with("yaw, pitch, roll]."));
    }

    #[test]
    fn grounding_prompt() {
        let opts = PromptOptions { num_frames: 2, image_token: "<img>".into(), ..Default::default() };
        let p = build_prompt(&PromptTask::Grounding { query: "There is a beige wooden bookshelf.".into() }, &opts).unwrap();
        assert_eq!(
            p,
            "Frame-0: <img>Frame-1: <img>\n\
             Localize the first clear frame in the video showing the object described in the text.\n\
             Text: There is a beige wooden bookshelf.\n\
             Output a JSON dictionary with the frame index in \"frame\" and its 3D bounding box in \"box_3d\" in the frame's coordinates."
        );
        assert!(build_prompt(&PromptTask::Grounding { query: "  ".into() }, &opts).is_err());
        assert!(build_prompt(&PromptTask::Detection, &PromptOptions { num_frames: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn grounding_sample_parses_exactly() {
        let r = parse_grounding_response(GROUNDING_SAMPLE).unwrap();
        assert_eq!(r.frame, 12);
        assert_eq!(r.bbox.to_array(), [-0.63, -0.83, 2.43, 3.0, 0.59, 2.35, -2.32, 1.18, 3.05]);
    }

    #[test]
    fn grounding_plain_and_errors() {
        let r = parse_grounding_response(r#"{"frame": 0, "bbox_3d": [0,0,0,1,1,1,0,0,0]}"#).unwrap();
        assert_eq!(r.frame, 0);
        assert_eq!(r.bbox, OrientedBox3D::axis_aligned(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)).unwrap());

        assert_eq!(parse_grounding_response(r#"{"frame": 3, "bbox_3d": [1,2,3]}"#), Err(ParseError::Arity(3)));
        assert_eq!(parse_grounding_response(r#"{"bbox_3d": [0,0,0,1,1,1,0,0,0]}"#), Err(ParseError::MissingKey("frame")));
        assert_eq!(parse_grounding_response(r#"{"frame": 1}"#), Err(ParseError::MissingKey("bbox_3d")));
        assert_eq!(
            parse_grounding_response(r#"{"frame": 1, "bbox_3d": [0,0,"x",1,1,1,0,0,0]}"#),
            Err(ParseError::BadNumber { index: 2 })
        );
        assert_eq!(parse_grounding_response(r#"{"frame": -1, "box_3d": [0,0,0,1,1,1,0,0,0]}"#), Err(ParseError::BadFrame));
        assert_eq!(parse_grounding_response(""), Err(ParseError::NoJson));
        assert_eq!(parse_grounding_response("[1, 2]"), Err(ParseError::NotAnObject));
        assert!(matches!(parse_grounding_response("{\"frame\": 1,"), Err(ParseError::NoJson)));
        assert!(matches!(parse_grounding_response("{\"frame\" 1}"), Err(ParseError::InvalidJson(_))));
    }

    #[test]
    fn grounding_accepts_box_3d_and_prose() {
        let text = "Sure! The object is here: {\"frame\": 4, \"box_3d\": [1, 2, 3, 1, 1, 1, 0.5, 0, 0]} hope that helps";
        let r = parse_grounding_response(text).unwrap();
        assert_eq!(r.frame, 4);
        assert_eq!(r.bbox.angles().x, 0.5);
        let r = parse_grounding_response(r#"{"frame": 2.0, "bbox_3d": ["1", 2, 3, 1, 1, 1, 0, 0, 0]}"#).unwrap();
        assert_eq!((r.frame, r.bbox.center().x), (2, 1.0));
    }

    #[test]
    fn detection_sample_parses_exactly() {
        let parsed = parse_detection_response(DETECTION_SAMPLE, ParseMode::Strict).unwrap();
        assert!(parsed.warnings.is_empty());
        assert_eq!(parsed.response.items.len(), 1);
        assert_eq!(parsed.response.items[0].label, "bag");
        assert_eq!(parsed.response.items[0].bbox.to_array(), [0.0, -0.3, 1.0, 0.26, 0.26, 0.15, 1.67, 0.96, -2.98]);
    }

    #[test]
    fn detection_edge_cases() {
        let empty = parse_detection_response("```json\n[]\n```", ParseMode::Lenient).unwrap();
        assert!(empty.response.items.is_empty() && empty.warnings.is_empty());

        let mixed = r#"[{"label": "chair", "bbox_3d": [0,0,0,1,1,1,0,0,0]}, {"label": "table", "bbox_3d": [0,0,0,1,1,1,0,0]}]"#;
        let lenient = parse_detection_response(mixed, ParseMode::Lenient).unwrap();
        assert_eq!(lenient.response.items.len(), 1);
        assert_eq!(lenient.warnings, vec![ParseError::Entry { index: 1, source: Box::new(ParseError::Arity(8)) }]);
        assert_eq!(
            parse_detection_response(mixed, ParseMode::Strict),
            Err(ParseError::Entry { index: 1, source: Box::new(ParseError::Arity(8)) })
        );

        assert_eq!(parse_detection_response(r#"{"label": "x"}"#, ParseMode::Lenient), Err(ParseError::NotAList));
        let no_label = parse_detection_response(r#"[{"bbox_3d": [0,0,0,1,1,1,0,0,0]}]"#, ParseMode::Lenient).unwrap();
        assert_eq!(no_label.warnings.len(), 1);
    }

    #[test]
    fn fenced_and_unfenced_agree() {
        let payload = r#"{"frame": 7, "bbox_3d": [0.1, 0.2, 0.3, 1, 2, 3, 0.4, 0.5, 0.6]}"#;
        let fenced = format!("Here you go:\n```json\n{payload}\n```\n");
        assert_eq!(parse_grounding_response(payload), parse_grounding_response(&fenced));
    }

    #[test]
    fn rendered_answers_parse_back() {
        let b = OrientedBox3D::from_array([-0.63, -0.83, 2.43, 3.0, 0.59, 2.35, -2.32, 1.18, 3.05]).unwrap();
        let text = render_grounding_answer(12, &b);
        assert_eq!(text, "```json\n{\"frame\": 12, \"bbox_3d\": [-0.63, -0.83, 2.43, 3.00, 0.59, 2.35, -2.32, 1.18, 3.05]}\n```");
        assert_eq!(parse_grounding_response(&text).unwrap().bbox, b);

        let items = vec![DetectionItem { label: "bag".into(), bbox: b }, DetectionItem { label: "trash \"bin\"".into(), bbox: b }];
        let parsed = parse_detection_response(&render_detection_answer(&items), ParseMode::Strict).unwrap();
        assert_eq!(parsed.response.items, items);
    }
}
