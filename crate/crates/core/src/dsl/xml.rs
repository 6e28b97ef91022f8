//! XML reader and canonical printer for model descriptions.
//!
//! Schema (see docs/dsl.md):
//!
//! ```xml
//! <Model name="...">
//!   <Parameter name="a" default="270"/>
//!   <StateVariable name="S" init_lo="0" init_hi="1" clamp_lo="0" clamp_hi="1"/>
//!   <DerivedVariable name="x" value="w*J*S + J*c + I_o"/>
//!   <Coupling name="c" pre="pre" difference="false"/>
//!   <TimeDerivative variable="S" value="..."/>
//!   <Exposure of="S"/>
//!   <Exposure of="r" kind="rate"/>
//!   <Noise state="S" sigma="0.01"/>
//! </Model>
//! ```

use super::expr::parse_expr;
use super::{
    CouplingTerm, DerivedVar, DslError, Exposure, ModelSpec, Parameter, Result, StateVar,
};
use quick_xml::events::Event;

struct RawElement {
    name: String,
    attrs: Vec<(String, String)>,
    line: usize,
}

fn line_of(text: &str, byte_pos: usize) -> usize {
    text.as_bytes()[..byte_pos.min(text.len())]
        .iter()
        .filter(|&&b| b == b'\n')
        .count()
        + 1
}

/// Parses XML into a validated ModelSpec (derived variables in topological
/// order). Errors carry line numbers where available.
pub fn parse_model(xml_text: &str) -> Result<ModelSpec> {
    let mut reader = quick_xml::Reader::from_str(xml_text);
    reader.config_mut().trim_text(true);

    let mut elements: Vec<RawElement> = Vec::new();
    let mut model_attrs: Option<RawElement> = None;
    let mut depth = 0usize;

    loop {
        let ev = reader.read_event().map_err(|e| {
            let pos = reader.error_position() as usize;
            DslError::Xml(format!("line {}: {e}", line_of(xml_text, pos)))
        })?;
        // Position after the event: the line its tag ends on.
        let pos = reader.buffer_position() as usize;
        match ev {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let is_empty = matches!(ev, Event::Empty(_));
                let name = String::from_utf8_lossy(e.name().as_ref()).to_string();
                let line = line_of(xml_text, pos);
                let mut attrs = Vec::new();
                for a in e.attributes() {
                    let a = a.map_err(|e| {
                        DslError::Xml(format!("line {line}: bad attribute: {e}"))
                    })?;
                    attrs.push((
                        String::from_utf8_lossy(a.key.as_ref()).to_string(),
                        a.normalized_value(quick_xml::XmlVersion::default())
                            .map_err(|e| DslError::Xml(format!("line {line}: {e}")))?
                            .to_string(),
                    ));
                }
                let raw = RawElement { name, attrs, line };
                if depth == 0 {
                    if raw.name != "Model" {
                        return Err(DslError::UnknownElement {
                            name: raw.name,
                            line: raw.line,
                        });
                    }
                    model_attrs = Some(raw);
                } else if depth == 1 {
                    elements.push(raw);
                } else {
                    return Err(DslError::UnknownElement {
                        name: raw.name,
                        line: raw.line,
                    });
                }
                if !is_empty {
                    depth += 1;
                }
            }
            Event::End(_) => depth -= 1,
            Event::Text(t) => {
                let line = line_of(xml_text, pos);
                return Err(DslError::Xml(format!(
                    "line {line}: unexpected text content {:?}",
                    String::from_utf8_lossy(&t)
                )));
            }
            Event::Eof => {
                if depth != 0 {
                    return Err(DslError::Xml("unexpected end of file inside <Model>".into()));
                }
                break;
            }
            // Comments, declarations, processing instructions are ignored.
            _ => {}
        }
    }

    let model = model_attrs.ok_or_else(|| DslError::Xml("no <Model> element found".into()))?;
    let name = require_attr(&model, "name")?;
    only_attrs(&model, &["name"])?;

    let mut parameters = Vec::new();
    let mut state_vars = Vec::new();
    let mut derived_vars = Vec::new();
    let mut coupling_terms = Vec::new();
    let mut exposures = Vec::new();
    let mut derivative_map: Vec<(String, super::Expr, usize)> = Vec::new();
    let mut noise_map: Vec<(String, f64, usize)> = Vec::new();

    for el in &elements {
        match el.name.as_str() {
            "Parameter" => {
                only_attrs(el, &["name", "default"])?;
                parameters.push(Parameter {
                    name: require_attr(el, "name")?,
                    default: f64_attr(el, "default")?,
                });
            }
            "StateVariable" => {
                only_attrs(el, &["name", "init_lo", "init_hi", "clamp_lo", "clamp_hi"])?;
                let clamp_lo = opt_f64_attr(el, "clamp_lo")?;
                let clamp_hi = opt_f64_attr(el, "clamp_hi")?;
                let clamp = match (clamp_lo, clamp_hi) {
                    (None, None) => None,
                    (Some(lo), Some(hi)) => Some((lo, hi)),
                    _ => {
                        return Err(DslError::BadAttribute {
                            element: el.name.clone(),
                            attr: "clamp_lo/clamp_hi".into(),
                            line: el.line,
                            msg: "clamp bounds must be given together".into(),
                        })
                    }
                };
                state_vars.push(StateVar {
                    name: require_attr(el, "name")?,
                    init_lo: f64_attr(el, "init_lo")?,
                    init_hi: f64_attr(el, "init_hi")?,
                    clamp,
                });
            }
            "DerivedVariable" => {
                only_attrs(el, &["name", "value"])?;
                let name = require_attr(el, "name")?;
                let expr = expr_attr(el, "value", &format!("DerivedVariable {name}"))?;
                derived_vars.push(DerivedVar { name, expr });
            }
            "Coupling" => {
                only_attrs(el, &["name", "pre", "difference"])?;
                let name = require_attr(el, "name")?;
                let pre = expr_attr(el, "pre", &format!("Coupling {name}"))?;
                let difference = match attr(el, "difference") {
                    None => false,
                    Some(v) => bool_attr(el, "difference", &v)?,
                };
                coupling_terms.push(CouplingTerm {
                    name,
                    pre,
                    difference,
                });
            }
            "TimeDerivative" => {
                only_attrs(el, &["variable", "value"])?;
                let var = require_attr(el, "variable")?;
                let expr = expr_attr(el, "value", &format!("TimeDerivative of {var}"))?;
                derivative_map.push((var, expr, el.line));
            }
            "Exposure" => {
                only_attrs(el, &["of", "kind"])?;
                let of = require_attr(el, "of")?;
                let rate = match attr(el, "kind") {
                    None => false,
                    Some(k) if k == "rate" => true,
                    Some(k) => {
                        return Err(DslError::BadAttribute {
                            element: "Exposure".into(),
                            attr: "kind".into(),
                            line: el.line,
                            msg: format!("unknown kind {k:?} (expected \"rate\")"),
                        })
                    }
                };
                exposures.push(Exposure { of, rate });
            }
            "Noise" => {
                only_attrs(el, &["state", "sigma"])?;
                noise_map.push((require_attr(el, "state")?, f64_attr(el, "sigma")?, el.line));
            }
            other => {
                return Err(DslError::UnknownElement {
                    name: other.to_string(),
                    line: el.line,
                })
            }
        }
    }

    // Match derivatives and noise entries to state variables by name.
    let mut derivatives: Vec<Option<super::Expr>> = vec![None; state_vars.len()];
    for (var, expr, line) in derivative_map {
        match state_vars.iter().position(|s| s.name == var) {
            Some(i) => {
                if derivatives[i].is_some() {
                    return Err(DslError::DuplicateName {
                        name: format!("TimeDerivative of {var}"),
                        line,
                    });
                }
                derivatives[i] = Some(expr);
            }
            None => {
                return Err(DslError::UndefinedIdentifier {
                    name: var,
                    context: format!("line {line}: TimeDerivative"),
                })
            }
        }
    }
    let mut noise_sigma = vec![0.0; state_vars.len()];
    for (var, sigma, line) in noise_map {
        match state_vars.iter().position(|s| s.name == var) {
            Some(i) => noise_sigma[i] = sigma,
            None => {
                return Err(DslError::UndefinedIdentifier {
                    name: var,
                    context: format!("line {line}: Noise"),
                })
            }
        }
    }
    for (sv, d) in state_vars.iter().zip(&derivatives) {
        if d.is_none() {
            return Err(DslError::MissingDerivative(sv.name.clone()));
        }
    }

    ModelSpec {
        name,
        parameters,
        state_vars,
        derived_vars,
        coupling_terms,
        exposures,
        derivatives: derivatives.into_iter().map(Option::unwrap).collect(),
        noise_sigma,
    }
    .validated()
}

fn attr(el: &RawElement, name: &str) -> Option<String> {
    el.attrs
        .iter()
        .find(|(k, _)| k == name)
        .map(|(_, v)| v.clone())
}

fn require_attr(el: &RawElement, name: &str) -> Result<String> {
    attr(el, name).ok_or_else(|| DslError::MissingAttribute {
        element: el.name.clone(),
        attr: name.into(),
        line: el.line,
    })
}

fn only_attrs(el: &RawElement, allowed: &[&str]) -> Result<()> {
    for (k, _) in &el.attrs {
        if !allowed.contains(&k.as_str()) {
            return Err(DslError::UnknownAttribute {
                element: el.name.clone(),
                attr: k.clone(),
                line: el.line,
            });
        }
    }
    Ok(())
}

fn f64_attr(el: &RawElement, name: &str) -> Result<f64> {
    let v = require_attr(el, name)?;
    v.trim().parse().map_err(|_| DslError::BadAttribute {
        element: el.name.clone(),
        attr: name.into(),
        line: el.line,
        msg: format!("not a number: {v:?}"),
    })
}

fn opt_f64_attr(el: &RawElement, name: &str) -> Result<Option<f64>> {
    match attr(el, name) {
        None => Ok(None),
        Some(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| DslError::BadAttribute {
                element: el.name.clone(),
                attr: name.into(),
                line: el.line,
                msg: format!("not a number: {v:?}"),
            }),
    }
}

fn bool_attr(el: &RawElement, name: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(DslError::BadAttribute {
            element: el.name.clone(),
            attr: name.into(),
            line: el.line,
            msg: format!("expected true/false, found {v:?}"),
        }),
    }
}

fn expr_attr(el: &RawElement, name: &str, context: &str) -> Result<super::Expr> {
    let text = require_attr(el, name)?;
    parse_expr(&text).map_err(|msg| DslError::BadExpression {
        context: format!("line {}: {context}", el.line),
        msg,
    })
}

/// Canonical XML printer. `parse_model(print_model(spec))` reproduces the
/// spec exactly (expressions are printed with canonical spacing and
/// minimal parentheses).
pub fn print_model(spec: &ModelSpec) -> String {
    let esc = |s: &str| {
        s.replace('&', "&amp;")
            .replace('<', "&lt;")
            .replace('>', "&gt;")
            .replace('"', "&quot;")
    };
    let mut out = String::new();
    out.push_str(&format!("<Model name=\"{}\">\n", esc(&spec.name)));
    for p in &spec.parameters {
        out.push_str(&format!(
            "  <Parameter name=\"{}\" default=\"{}\"/>\n",
            esc(&p.name),
            p.default
        ));
    }
    for s in &spec.state_vars {
        out.push_str(&format!(
            "  <StateVariable name=\"{}\" init_lo=\"{}\" init_hi=\"{}\"",
            esc(&s.name),
            s.init_lo,
            s.init_hi
        ));
        if let Some((lo, hi)) = s.clamp {
            out.push_str(&format!(" clamp_lo=\"{lo}\" clamp_hi=\"{hi}\""));
        }
        out.push_str("/>\n");
    }
    for d in &spec.derived_vars {
        out.push_str(&format!(
            "  <DerivedVariable name=\"{}\" value=\"{}\"/>\n",
            esc(&d.name),
            esc(&d.expr.to_string())
        ));
    }
    for c in &spec.coupling_terms {
        out.push_str(&format!(
            "  <Coupling name=\"{}\" pre=\"{}\" difference=\"{}\"/>\n",
            esc(&c.name),
            esc(&c.pre.to_string()),
            c.difference
        ));
    }
    for (sv, d) in spec.state_vars.iter().zip(&spec.derivatives) {
        out.push_str(&format!(
            "  <TimeDerivative variable=\"{}\" value=\"{}\"/>\n",
            esc(&sv.name),
            esc(&d.to_string())
        ));
    }
    for e in &spec.exposures {
        if e.rate {
            out.push_str(&format!("  <Exposure of=\"{}\" kind=\"rate\"/>\n", esc(&e.of)));
        } else {
            out.push_str(&format!("  <Exposure of=\"{}\"/>\n", esc(&e.of)));
        }
    }
    for (sv, sigma) in spec.state_vars.iter().zip(&spec.noise_sigma) {
        if *sigma != 0.0 {
            out.push_str(&format!(
                "  <Noise state=\"{}\" sigma=\"{}\"/>\n",
                esc(&sv.name),
                sigma
            ));
        }
    }
    out.push_str("</Model>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"<Model name="decay">
  <StateVariable name="x" init_lo="0" init_hi="1"/>
  <TimeDerivative variable="x" value="-x"/>
  <Exposure of="x"/>
</Model>"#;

    #[test]
    fn minimal_model_parses() {
        let m = parse_model(MINIMAL).unwrap();
        assert_eq!(m.name, "decay");
        assert_eq!(m.n_state(), 1);
        assert_eq!(
            m.derivatives[0],
            super::super::Expr::Neg(Box::new(super::super::Expr::Ident("x".into())))
        );
    }

    #[test]
    fn undefined_symbol_is_reported_with_name() {
        let xml = r#"<Model name="m">
  <StateVariable name="x" init_lo="0" init_hi="1"/>
  <TimeDerivative variable="x" value="-q"/>
  <Exposure of="x"/>
</Model>"#;
        let err = parse_model(xml).unwrap_err().to_string();
        assert!(err.contains("\"q\""), "{err}");
    }

    #[test]
    fn unknown_element_and_attribute_rejected_with_line() {
        let xml = "<Model name=\"m\">\n  <Widget/>\n</Model>";
        let err = parse_model(xml).unwrap_err().to_string();
        assert!(err.contains("Widget") && err.contains("line 2"), "{err}");

        let xml = "<Model name=\"m\">\n  <StateVariable name=\"x\" init_lo=\"0\" init_hi=\"1\" wat=\"1\"/>\n  <TimeDerivative variable=\"x\" value=\"-x\"/>\n  <Exposure of=\"x\"/>\n</Model>";
        let err = parse_model(xml).unwrap_err().to_string();
        assert!(err.contains("wat"), "{err}");
    }

    #[test]
    fn xml_syntax_error_reported() {
        assert!(matches!(
            parse_model("<Model name=\"m"),
            Err(DslError::Xml(_))
        ));
        assert!(matches!(
            parse_model("<Model name=\"m\">"),
            Err(DslError::Xml(_))
        ));
    }

    #[test]
    fn duplicate_and_missing_derivatives_rejected() {
        let xml = r#"<Model name="m">
  <StateVariable name="x" init_lo="0" init_hi="1"/>
  <StateVariable name="y" init_lo="0" init_hi="1"/>
  <TimeDerivative variable="x" value="-x"/>
  <Exposure of="x"/>
</Model>"#;
        assert!(matches!(
            parse_model(xml),
            Err(DslError::MissingDerivative(v)) if v == "y"
        ));

        let xml = r#"<Model name="m">
  <StateVariable name="x" init_lo="0" init_hi="1"/>
  <TimeDerivative variable="x" value="-x"/>
  <TimeDerivative variable="x" value="-2*x"/>
  <Exposure of="x"/>
</Model>"#;
        assert!(matches!(parse_model(xml), Err(DslError::DuplicateName { .. })));
    }

    #[test]
    fn escaped_comparison_in_attribute() {
        let xml = r#"<Model name="m">
  <Parameter name="d" default="0.1"/>
  <StateVariable name="x" init_lo="0" init_hi="1"/>
  <TimeDerivative variable="x" value="if(x &lt; d, 1, -1)"/>
  <Exposure of="x"/>
</Model>"#;
        let m = parse_model(xml).unwrap();
        assert_eq!(m.n_state(), 1);
    }

    #[test]
    fn print_parse_idempotent() {
        let xml = r#"<Model name="m">
  <Parameter name="tau" default="10"/>
  <StateVariable name="x" init_lo="0" init_hi="1" clamp_lo="0" clamp_hi="1"/>
  <StateVariable name="y" init_lo="-1" init_hi="1"/>
  <DerivedVariable name="u" value="x + y"/>
  <Coupling name="c" pre="sin(pre)" difference="true"/>
  <TimeDerivative variable="x" value="-x/tau + c"/>
  <TimeDerivative variable="y" value="u - y"/>
  <Exposure of="x"/>
  <Exposure of="u"/>
  <Noise state="y" sigma="0.05"/>
</Model>"#;
        let m1 = parse_model(xml).unwrap();
        let printed = print_model(&m1);
        let m2 = parse_model(&printed).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(printed, print_model(&m2));
    }
}
