import init, { domainScatter, lossCurves, sharpnessCurve } from "./pkg/epidg_wasm.js";

const DOMAIN_COLOURS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#d62728"];
const VARIANT_COLOURS = { AGG: "#888888", FCR: "#d62728" };
const SIGMAS = [0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.75, 1.0];

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function setStatus(id, text) {
  $(id).textContent = text;
}

// Runs `work` after the browser has painted the status line.
function later(work) {
  return new Promise((resolve, reject) =>
    setTimeout(() => {
      try {
        resolve(work());
      } catch (e) {
        reject(e);
      }
    }, 20));
}

function frame(ctx, w, h, pad, xr, yr, xlabel, ylabel) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#444";
  ctx.beginPath();
  ctx.moveTo(pad, pad / 2);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad / 2, h - pad);
  ctx.stroke();
  ctx.fillStyle = "#444";
  ctx.font = "12px system-ui";
  ctx.fillText(xlabel, w / 2, h - 8);
  ctx.save();
  ctx.translate(12, h / 2);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(ylabel, 0, 0);
  ctx.restore();
  ctx.fillText(yr[1].toFixed(2), 4, pad / 2 + 10);
  ctx.fillText(yr[0].toFixed(2), 4, h - pad);
  ctx.fillText(String(xr[0]), pad, h - pad + 14);
  ctx.fillText(String(+xr[1].toFixed(2)), w - pad, h - pad + 14);
  const sx = (x) => pad + ((x - xr[0]) / (xr[1] - xr[0] || 1)) * (w - 1.5 * pad);
  const sy = (y) => h - pad - ((y - yr[0]) / (yr[1] - yr[0] || 1)) * (h - 1.5 * pad);
  return [sx, sy];
}

function legend(ctx, entries, x, y) {
  ctx.font = "12px system-ui";
  entries.forEach(([name, colour], i) => {
    ctx.fillStyle = colour;
    ctx.fillRect(x, y + i * 16, 10, 10);
    ctx.fillStyle = "#222";
    ctx.fillText(name, x + 14, y + i * 16 + 9);
  });
}

function marker(ctx, shape, x, y) {
  const r = 3;
  ctx.beginPath();
  switch (shape % 4) {
    case 0: ctx.arc(x, y, r, 0, 2 * Math.PI); break;
    case 1: ctx.rect(x - r, y - r, 2 * r, 2 * r); break;
    case 2: ctx.moveTo(x, y - r - 1); ctx.lineTo(x + r + 1, y + r); ctx.lineTo(x - r - 1, y + r); ctx.closePath(); break;
    default: ctx.moveTo(x - r, y - r); ctx.lineTo(x + r, y + r); ctx.moveTo(x + r, y - r); ctx.lineTo(x - r, y + r);
  }
  shape % 4 === 3 ? ctx.stroke() : ctx.fill();
}

function drawScatter() {
  setStatus("sc-status", "Generating...");
  return later(() => {
    const data = JSON.parse(domainScatter(num("sc-seed"), num("sc-sources"), num("sc-classes"), num("sc-shift"), 150));
    const canvas = $("sc-canvas");
    const ctx = canvas.getContext("2d");
    const xs = data.points.map((p) => p.x);
    const ys = data.points.map((p) => p.y);
    const [sx, sy] = frame(ctx, canvas.width, canvas.height, 40,
      [Math.min(...xs), Math.max(...xs)], [Math.min(...ys), Math.max(...ys)], "x0", "x1");
    for (const p of data.points) {
      const colour = DOMAIN_COLOURS[p.domain % DOMAIN_COLOURS.length];
      ctx.fillStyle = colour;
      ctx.strokeStyle = colour;
      ctx.globalAlpha = p.domain === data.domains.length - 1 ? 0.9 : 0.55;
      marker(ctx, p.label, sx(p.x), sy(p.y));
    }
    ctx.globalAlpha = 1;
    legend(ctx, data.domains.map((d, i) => [d, DOMAIN_COLOURS[i % DOMAIN_COLOURS.length]]), canvas.width - 90, 10);
    setStatus("sc-status", `${data.points.length} points, ${data.domains.length} domains, ${data.classes} classes.`);
  });
}

function smooth(values, window) {
  const out = [];
  let acc = 0;
  for (let i = 0; i < values.length; i++) {
    acc += values[i];
    if (i >= window) acc -= values[i - window];
    out.push(acc / Math.min(i + 1, window));
  }
  return out;
}

function drawCurves() {
  setStatus("lc-status", "Training AGG and Epi-FCR...");
  return later(() => {
    const t0 = performance.now();
    const data = JSON.parse(lossCurves(num("lc-seed"), num("lc-iters"), num("lc-shift"), num("lc-l1"), num("lc-l2"), num("lc-l3")));
    const canvas = $("lc-canvas");
    const ctx = canvas.getContext("2d");
    const series = data.curves.map((c) => ({ name: c.variant, acc: c.target_accuracy, ys: smooth(c.l_agg, 20) }));
    const ymax = Math.max(...series.flatMap((s) => s.ys));
    const [sx, sy] = frame(ctx, canvas.width, canvas.height, 40, [0, data.iterations], [0, ymax], "iteration", "L_agg");
    ctx.strokeStyle = "#bbb";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(sx(data.warmup), sy(0));
    ctx.lineTo(sx(data.warmup), sy(ymax));
    ctx.stroke();
    ctx.setLineDash([]);
    for (const s of series) {
      ctx.strokeStyle = VARIANT_COLOURS[s.name] || "#000";
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      s.ys.forEach((y, i) => (i ? ctx.lineTo(sx(i), sy(y)) : ctx.moveTo(sx(i), sy(y))));
      ctx.stroke();
    }
    ctx.lineWidth = 1;
    legend(ctx, series.map((s) => [`${s.name} (target acc ${s.acc.toFixed(3)})`, VARIANT_COLOURS[s.name]]), canvas.width - 210, 10);
    setStatus("lc-status", `Done in ${((performance.now() - t0) / 1000).toFixed(1)} s. Dashed line: end of warmup.`);
  });
}

function drawSharpness() {
  setStatus("sh-status", "Training and perturbing...");
  return later(() => {
    const data = JSON.parse(sharpnessCurve(num("sh-seed"), num("sh-iters"), 0.6, new Float64Array(SIGMAS), num("sh-draws")));
    const canvas = $("sh-canvas");
    const ctx = canvas.getContext("2d");
    const [sx, sy] = frame(ctx, canvas.width, canvas.height, 40, [0, SIGMAS[SIGMAS.length - 1]], [0, 1], "sigma", "target accuracy");
    for (const s of data.series) {
      const colour = VARIANT_COLOURS[s.variant] || "#000";
      ctx.strokeStyle = colour;
      ctx.fillStyle = colour;
      ctx.beginPath();
      data.sigmas.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(s.mean[i])) : ctx.moveTo(sx(x), sy(s.mean[i]))));
      ctx.stroke();
      data.sigmas.forEach((x, i) => {
        ctx.beginPath();
        ctx.moveTo(sx(x), sy(s.mean[i] - s.std[i]));
        ctx.lineTo(sx(x), sy(s.mean[i] + s.std[i]));
        ctx.stroke();
        ctx.fillRect(sx(x) - 2, sy(s.mean[i]) - 2, 4, 4);
      });
    }
    legend(ctx, data.series.map((s) => [s.variant, VARIANT_COLOURS[s.variant]]), canvas.width - 90, 10);
    setStatus("sh-status", `${data.draws} draws per sigma; bars are one standard deviation.`);
  });
}

function guard(action, statusId) {
  return () => action().catch((e) => setStatus(statusId, `Error: ${e}`));
}

await init();
$("sc-run").addEventListener("click", guard(drawScatter, "sc-status"));
$("lc-run").addEventListener("click", guard(drawCurves, "lc-status"));
$("sh-run").addEventListener("click", guard(drawSharpness, "sh-status"));
guard(drawScatter, "sc-status")();
