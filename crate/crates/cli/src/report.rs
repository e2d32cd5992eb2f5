use survcontour_core::registry::ModelSpec;

/// JSON is embedded verbatim inside script tags; only `</` needs escaping.
fn embed(json: &[u8]) -> String {
    String::from_utf8_lossy(json).replace("</", "<\\/")
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Static page that draws the contour, histogram and quantile curves from
/// the embedded payloads. No external assets.
pub fn render(spec: &ModelSpec, contour: &[u8], quantiles: &[u8], metrics: &[u8]) -> String {
    let title = escape_html(&format!(
        "{} contour: {} by {}",
        spec.family.tag(),
        spec.roles.time_column,
        spec.roles.predictor
    ));
    format!(
        r#"<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>{title}</title>
<style>
body {{ font-family: sans-serif; margin: 1.5em; color: #222; }}
.row {{ display: flex; gap: 1em; align-items: flex-start; }}
canvas {{ border: 1px solid #ccc; }}
#readout {{ font-family: monospace; min-height: 1.4em; }}
table {{ border-collapse: collapse; }}
td, th {{ padding: 2px 8px; text-align: left; }}
</style>
</head>
<body>
<h1>{title}</h1>
<div id="readout">hover over the surface</div>
<div class="row">
<canvas id="surface" width="640" height="400"></canvas>
<canvas id="hist" width="120" height="400"></canvas>
</div>
<h2>Quantile curves</h2>
<canvas id="curves" width="640" height="300"></canvas>
<h2>Metrics</h2>
<table id="metrics"></table>
<script type="application/json" id="contour-data">{contour}</script>
<script type="application/json" id="quantile-data">{quantiles}</script>
<script type="application/json" id="metrics-data">{metrics}</script>
<script>
const S = JSON.parse(document.getElementById('contour-data').textContent);
const Q = JSON.parse(document.getElementById('quantile-data').textContent);
const M = JSON.parse(document.getElementById('metrics-data').textContent);
function color(p) {{
  const t = Math.max(0, Math.min(1, p));
  const r = Math.round(255 * Math.min(1, 2 * (1 - t)));
  const g = Math.round(255 * Math.min(1, 2 * t));
  return `rgb(${{r}},${{g}},90)`;
}}
const nr = S.predictor_grid.length, nc = S.time_grid.length;
const sc = document.getElementById('surface'), sx = sc.getContext('2d');
const cw = sc.width / nc, ch = sc.height / nr;
for (let i = 0; i < nr; i++) for (let j = 0; j < nc; j++) {{
  sx.fillStyle = color(S.prob[i * nc + j]);
  sx.fillRect(j * cw, sc.height - (i + 1) * ch, Math.ceil(cw), Math.ceil(ch));
}}
sc.addEventListener('mousemove', ev => {{
  const b = sc.getBoundingClientRect();
  const j = Math.min(nc - 1, Math.floor((ev.clientX - b.left) / cw));
  const i = Math.min(nr - 1, Math.floor((sc.height - (ev.clientY - b.top)) / ch));
  if (i < 0 || j < 0) return;
  document.getElementById('readout').textContent =
    `time ${{S.time_grid[j]}}  ${{S.predictor}} ${{S.predictor_grid[i]}}  ${{S.outcome_kind}} ${{S.prob[i * nc + j]}}`;
}});
const hc = document.getElementById('hist'), hx = hc.getContext('2d');
const counts = S.histogram.counts, hmax = Math.max(...counts, 1), bh = hc.height / counts.length;
hx.fillStyle = 'orange';
counts.forEach((c, k) => hx.fillRect(0, hc.height - (k + 1) * bh, hc.width * c / hmax, bh - 1));
const qc = document.getElementById('curves'), qx = qc.getContext('2d');
const tmax = Math.max(...Q.time_grid, 1e-12);
Q.curves.forEach((c, k) => {{
  qx.strokeStyle = `hsl(${{k * 60}},70%,40%)`;
  qx.beginPath();
  c.values.forEach((v, j) => {{
    const x = qc.width * Q.time_grid[j] / tmax, y = qc.height * (1 - v);
    if (j === 0) qx.moveTo(x, y); else qx.lineTo(x, y);
  }});
  qx.stroke();
  qx.fillStyle = qx.strokeStyle;
  qx.fillText(`q${{c.level}}: ${{c.predictor_value.toPrecision(4)}}`, 8, 14 + 14 * k);
}});
const mt = document.getElementById('metrics');
[['C-index', M.c_index], ['comparable pairs', M.comparable_pairs], ['integrated Brier', M.integrated_brier], ['window end', M.tau], ['risk score', M.risk_score]]
  .forEach(([k, v]) => {{ const r = mt.insertRow(); r.insertCell().textContent = k; r.insertCell().textContent = v; }});
</script>
</body>
</html>
"#,
        contour = embed(contour),
        quantiles = embed(quantiles),
        metrics = embed(metrics),
    )
}
