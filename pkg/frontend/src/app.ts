/** Browser wiring: queue list, region box editor, subgraph browser.
 *
 * Logic lives in api.ts / state.ts / boxedit.ts; this file only touches the
 * DOM. Keyboard shortcuts on the selected item: a approve, r reject, e edit.
 */

import { ApiError, Client, ReviewItem, ReviewKindName } from "./api.js";
import { Box, boxFromPayload, clampBox, validateBox } from "./boxedit.js";
import { ClientValidationError, QueueStore } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function describe(item: ReviewItem): string {
  const p = item.payload;
  switch (item.kind) {
    case "triplet":
      return `${p.head} / ${p.relation} / ${p.tail}`;
    case "region":
      return `${p.label} in ${p.image} [${(p.box as number[]).join(", ")}]`;
    case "merge":
      return `merge ${p.absorbed_label ?? p.absorbed} into ${p.survivor_label ?? p.survivor}`;
  }
}

class App {
  private store: QueueStore;
  private client: Client;
  private selected: string | null = null;
  private editBox: Box | null = null;

  constructor(token: string) {
    this.client = new Client("", token);
    this.store = new QueueStore(this.client);
    this.store.subscribe(() => this.renderQueue());
  }

  async start(): Promise<void> {
    el<HTMLSelectElement>("kind-filter").addEventListener("change", (ev) => {
      const value = (ev.target as HTMLSelectElement).value;
      this.store.kind = (value || undefined) as ReviewKindName | undefined;
      void this.store.load(1);
    });
    el<HTMLButtonElement>("apply-btn").addEventListener("click", () => {
      void this.applyAll();
    });
    el<HTMLButtonElement>("subgraph-btn").addEventListener("click", () => {
      void this.showSubgraph(el<HTMLInputElement>("subgraph-label").value);
    });
    document.addEventListener("keydown", (ev) => this.onKey(ev));
    await this.store.load();
  }

  private onKey(ev: KeyboardEvent): void {
    if (ev.target instanceof HTMLInputElement) return;
    if (!this.selected) return;
    if (ev.key === "a") void this.decide("approve");
    else if (ev.key === "r") void this.decide("reject");
    else if (ev.key === "e") this.openEditor();
  }

  private async decide(action: "approve" | "reject"): Promise<void> {
    if (!this.selected) return;
    try {
      if (action === "approve") await this.store.approve(this.selected);
      else await this.store.reject(this.selected);
      this.selected = null;
      this.editBox = null;
      this.renderDetail();
    } catch (err) {
      this.setStatus(String(err));
    }
  }

  private openEditor(): void {
    const item = this.selected ? this.store.find(this.selected) : undefined;
    if (!item || item.kind !== "region") return;
    this.editBox = boxFromPayload(item.payload);
    this.renderDetail();
  }

  private async submitEdit(): Promise<void> {
    const item = this.selected ? this.store.find(this.selected) : undefined;
    if (!item || !this.editBox) return;
    const payload = { ...item.payload, box: [
      this.editBox.x, this.editBox.y, this.editBox.w, this.editBox.h] };
    try {
      await this.store.edit(item.id, payload);
      this.selected = null;
      this.editBox = null;
      this.renderDetail();
      this.setStatus("edit saved");
    } catch (err) {
      if (err instanceof ClientValidationError) {
        this.setStatus(`blocked: ${err.message}`);
      } else if (err instanceof ApiError) {
        this.setStatus(`server refused (${err.code}): ${err.message}`);
      } else {
        this.setStatus(String(err));
      }
    }
  }

  private async applyAll(): Promise<void> {
    try {
      const result = await this.store.applyAll();
      this.setStatus(`applied ${JSON.stringify(result.applied)}, `
        + `checksum ${result.checksum.slice(0, 12)}`);
      await this.store.load();
    } catch (err) {
      this.setStatus(String(err));
    }
  }

  private async showSubgraph(label: string): Promise<void> {
    if (!label.trim()) return;
    const panel = el<HTMLElement>("subgraph");
    try {
      const sub = await this.client.subgraph(label.trim());
      const rows = sub.triplets.map((t) =>
        `<tr class="${t.visual ? "visual" : ""}"><td>${t.head}</td>` +
        `<td>${t.relation}</td><td>${t.tail}</td>` +
        `<td>${t.visual ? "visual" : ""}</td></tr>`).join("");
      const ents = sub.entities.map((e) =>
        `<li>${e.label} <small>${e.kind}, ${e.groundings} regions</small></li>`)
        .join("");
      panel.innerHTML = `<h3>${sub.label} (${sub.hops} hops)</h3>` +
        `<table><tr><th>head</th><th>relation</th><th>tail</th><th></th></tr>` +
        `${rows}</table><ul>${ents}</ul>`;
    } catch (err) {
      panel.textContent = String(err);
    }
  }

  private setStatus(text: string): void {
    el<HTMLElement>("status").textContent = text;
  }

  private renderQueue(): void {
    el<HTMLElement>("pending-count").textContent = String(this.store.total);
    const list = el<HTMLElement>("queue");
    list.innerHTML = "";
    for (const item of this.store.items) {
      const row = document.createElement("li");
      row.className = item.id === this.selected ? "selected" : "";
      row.textContent = `[${item.kind}] ${describe(item)}`;
      row.addEventListener("click", () => {
        this.selected = item.id;
        this.editBox = null;
        this.renderQueue();
        this.renderDetail();
      });
      list.appendChild(row);
    }
  }

  private renderDetail(): void {
    const panel = el<HTMLElement>("detail");
    panel.innerHTML = "";
    const item = this.selected ? this.store.find(this.selected) : undefined;
    if (!item) return;

    const title = document.createElement("h3");
    title.textContent = `${item.kind} ${item.id}`;
    panel.appendChild(title);
    const body = document.createElement("pre");
    body.textContent = JSON.stringify(item.payload, null, 2);
    panel.appendChild(body);

    if (item.kind === "region") {
      const image = String(item.payload.image ?? "");
      const img = document.createElement("img");
      img.src = this.client.imageUrl(image);
      img.alt = image;
      panel.appendChild(img);
      if (this.editBox) this.renderEditor(panel, item);
    }

    const actions = document.createElement("div");
    actions.className = "actions";
    for (const [label, fn] of [
      ["approve (a)", () => void this.decide("approve")],
      ["reject (r)", () => void this.decide("reject")],
      ["edit (e)", () => this.openEditor()],
    ] as const) {
      const btn = document.createElement("button");
      btn.textContent = label;
      btn.addEventListener("click", fn);
      actions.appendChild(btn);
    }
    panel.appendChild(actions);
  }

  private renderEditor(panel: HTMLElement, item: ReviewItem): void {
    const width = Number(item.payload.width);
    const height = Number(item.payload.height);
    const form = document.createElement("div");
    form.className = "box-editor";
    const inputs: Partial<Record<keyof Box, HTMLInputElement>> = {};
    for (const key of ["x", "y", "w", "h"] as const) {
      const input = document.createElement("input");
      input.type = "number";
      input.value = String(this.editBox![key]);
      input.addEventListener("input", () => {
        const next = { ...this.editBox! };
        next[key] = Number(input.value);
        this.editBox = next;
        refresh();
      });
      inputs[key] = input;
      const label = document.createElement("label");
      label.textContent = key;
      label.appendChild(input);
      form.appendChild(label);
    }

    const problems = document.createElement("p");
    problems.className = "problems";
    const save = document.createElement("button");
    save.textContent = "save edit";
    save.addEventListener("click", () => void this.submitEdit());
    const clamp = document.createElement("button");
    clamp.textContent = "clamp to image";
    clamp.addEventListener("click", () => {
      this.editBox = clampBox(this.editBox!, width, height);
      for (const key of ["x", "y", "w", "h"] as const) {
        inputs[key]!.value = String(this.editBox[key]);
      }
      refresh();
    });

    const refresh = () => {
      const found = validateBox(this.editBox!, width, height);
      problems.textContent = found.join("; ");
      // out-of-bounds edits never reach the server from this UI
      save.disabled = found.length > 0;
    };
    refresh();
    form.appendChild(problems);
    form.appendChild(save);
    form.appendChild(clamp);
    panel.appendChild(form);
  }
}

if (typeof document !== "undefined" && document.getElementById("queue")) {
  const params = new URLSearchParams(window.location.search);
  const token = params.get("token")
    ?? window.localStorage.getItem("visknow-token")
    ?? window.prompt("service token") ?? "";
  window.localStorage.setItem("visknow-token", token);
  void new App(token).start();
}
