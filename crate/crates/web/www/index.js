import init, { WarpExplorer, AgnosticExplorer } from "./pkg/tryon_web.js";

const H = 256, W = 192, LATTICE = 5;

function paint(canvas, bytes) {
  canvas.width = W;
  canvas.height = H;
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(bytes), W, H), 0, 0);
}

function setupWarp() {
  const canvas = document.getElementById("warp");
  const svg = document.getElementById("anchors");
  const scale = 288 / W;
  let explorer = new WarpExplorer(7n, 0, H, W);
  let drag = null;

  const draw = () => {
    paint(canvas, explorer.render());
    const a = explorer.anchors();
    svg.innerHTML = "";
    for (let k = 0; k < LATTICE * LATTICE; k++) {
      const c = document.createElementNS("http://www.w3.org/2000/svg", "circle");
      c.setAttribute("cx", a[2 * k] * scale);
      c.setAttribute("cy", a[2 * k + 1] * scale);
      c.setAttribute("r", 6);
      c.dataset.k = k;
      svg.appendChild(c);
    }
    document.getElementById("bending").textContent = explorer.bending().toFixed(4);
    document.getElementById("theta").textContent = explorer.theta_text();
  };

  svg.addEventListener("pointerdown", (e) => {
    if (e.target.dataset.k !== undefined) {
      drag = Number(e.target.dataset.k);
      svg.setPointerCapture(e.pointerId);
    }
  });
  svg.addEventListener("pointermove", (e) => {
    if (drag === null) return;
    const r = svg.getBoundingClientRect();
    explorer.move_anchor(Math.floor(drag / LATTICE), drag % LATTICE, (e.clientX - r.left) / scale, (e.clientY - r.top) / scale);
    draw();
  });
  svg.addEventListener("pointerup", () => { drag = null; });
  document.getElementById("warp-reset").onclick = () => { explorer.reset(); draw(); };
  document.getElementById("warp-grid").onchange = (e) => { explorer.set_show_grid(e.target.checked); draw(); };
  document.getElementById("warp-cat").onchange = (e) => {
    explorer.free();
    explorer = new WarpExplorer(7n, Number(e.target.value), H, W);
    explorer.set_show_grid(document.getElementById("warp-grid").checked);
    draw();
  };
  draw();
}

function setupAgnostic() {
  const canvas = document.getElementById("agn");
  const $ = (id) => document.getElementById(id);
  let explorer;

  const rebuild = () => {
    if (explorer) explorer.free();
    explorer = new AgnosticExplorer(BigInt($("seed").value || 0), H, W);
    explorer.set_wearing(Number($("wearing").value));
    apply();
  };
  const apply = () => {
    explorer.set_target(Number($("target").value));
    explorer.set_dilation(Number($("dilation").value));
    explorer.set_limb_radius(Number($("limb").value));
    paint(canvas, explorer.render(Number($("layer").value)));
    $("frac").textContent = (100 * explorer.masked_fraction()).toFixed(1) + "%";
  };

  $("seed").onchange = rebuild;
  $("wearing").onchange = rebuild;
  for (const id of ["target", "layer", "dilation", "limb"]) $(id).oninput = apply;
  rebuild();
}

await init();
setupWarp();
setupAgnostic();
