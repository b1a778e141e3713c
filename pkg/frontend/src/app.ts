// Console state and DOM wiring. The key stays in this module's memory; it is
// used only to decrypt answers locally and is never put into a request.

import { ApiClient, ApiError, ClusterView } from "./api.js";
import { AnswerPayload, decodeRows, expandSymbol, isAnswerPayload } from "./decode.js";
import { AuthenticationFailure, decryptAnswer, importKey, keyFromHex } from "./envelope.js";

interface HistoryEntry {
  text: string;
  mode: string;
  answerB64: string;
}

export class ConsoleSession {
  api: ApiClient | null = null;
  key: CryptoKey | null = null;
  mode = "model";
  history: HistoryEntry[] = [];
  busy = false;

  async connect(endpoint: string, keyHex: string): Promise<void> {
    this.key = await importKey(keyFromHex(keyHex));
    this.api = new ApiClient(endpoint);
  }

  async run(text: string): Promise<AnswerPayload> {
    if (!this.api || !this.key) throw new Error("not connected");
    if (this.busy) throw new Error("a query is already running");
    this.busy = true;
    try {
      const answerB64 = await this.api.postQuery(text, this.mode);
      const payload = await decryptAnswer(answerB64, this.key);
      if (!isAnswerPayload(payload)) throw new Error("malformed answer payload");
      this.history.push({ text, mode: this.mode, answerB64 });
      return payload;
    } finally {
      this.busy = false;
    }
  }

  async replay(index: number): Promise<AnswerPayload> {
    if (!this.key) throw new Error("not connected");
    const entry = this.history[index];
    const payload = await decryptAnswer(entry.answerB64, this.key);
    if (!isAnswerPayload(payload)) throw new Error("malformed answer payload");
    return payload;
  }
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, attrs: Record<string, string> = {}, text = ""): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

export function renderAnswer(payload: AnswerPayload, into: HTMLElement): void {
  into.replaceChildren();
  const meta = el("p", { class: "meta" },
    `${payload.op} | mode=${payload.mode} | count=${payload.count}` +
    (payload.approximate ? " | approximate" : ""));
  into.appendChild(meta);

  const table = el("table");
  const head = el("tr");
  for (const col of ["tid", "symbols", "items", "count"]) {
    head.appendChild(el("th", {}, col));
  }
  table.appendChild(head);
  for (const row of decodeRows(payload)) {
    const tr = el("tr");
    tr.appendChild(el("td", {}, row.tid === null ? "-" : String(row.tid)));
    const symCell = el("td");
    for (const sym of row.symbols) {
      // hover shows the symbol's expansion from the decrypted map
      const span = el("span", { class: "sym", title: expandSymbol(payload, sym) }, sym);
      symCell.appendChild(span);
      symCell.appendChild(document.createTextNode(" "));
    }
    tr.appendChild(symCell);
    tr.appendChild(el("td", {}, row.items.join(" ")));
    tr.appendChild(el("td", {}, row.count === null ? "" : String(row.count)));
    table.appendChild(tr);
  }
  into.appendChild(table);
}

function renderError(message: string, into: HTMLElement): void {
  into.replaceChildren(el("div", { class: "banner" }, message));
}

function renderCluster(view: ClusterView, into: HTMLElement,
                       session: ConsoleSession, refresh: () => void): void {
  into.replaceChildren();
  into.appendChild(el("p", { class: "meta" },
    `database ${view.database} | providers: ${view.csps.join(", ")}`));
  const table = el("table");
  const head = el("tr");
  for (const col of ["node", "cloud", "provider", "role", "fragments", ""]) {
    head.appendChild(el("th", {}, col));
  }
  table.appendChild(head);
  for (const node of view.nodes) {
    const tr = el("tr");
    tr.appendChild(el("td", {}, node.name));
    tr.appendChild(el("td", {}, node.cloud));
    tr.appendChild(el("td", {}, node.csp));
    tr.appendChild(el("td", {}, node.role));
    tr.appendChild(el("td", {}, String(node.fragments)));
    const actions = el("td");
    if (node.role === "slave") {
      const btn = el("button", {}, "remove");
      btn.onclick = async () => {
        try {
          await session.api!.postRebalance("remove", node.name);
          refresh();
        } catch (err) {
          renderError(String(err instanceof Error ? err.message : err), into);
        }
      };
      actions.appendChild(btn);
    }
    tr.appendChild(actions);
    table.appendChild(tr);
  }
  into.appendChild(table);

  const form = el("div", { class: "addnode" });
  const nameInput = el("input", { placeholder: "node name" });
  const cloudSelect = el("select");
  for (const cloud of Object.keys(view.clouds)) {
    cloudSelect.appendChild(el("option", { value: cloud }, cloud));
  }
  const addBtn = el("button", {}, "add slave");
  addBtn.onclick = async () => {
    if (!nameInput.value) return;
    try {
      await session.api!.postRebalance("add", nameInput.value, cloudSelect.value);
      refresh();
    } catch (err) {
      renderError(String(err instanceof Error ? err.message : err), into);
    }
  };
  form.append(nameInput, cloudSelect, addBtn);
  into.appendChild(form);
}

export function mountConsole(root: HTMLElement): void {
  const session = new ConsoleSession();

  const endpointInput = el("input", { value: window.location.origin, size: "32" });
  const keyInput = el("input", { type: "password", placeholder: "key (hex)", size: "40" });
  const modeSelect = el("select");
  modeSelect.appendChild(el("option", { value: "model" }, "model"));
  modeSelect.appendChild(el("option", { value: "exact" }, "exact"));
  const connectBtn = el("button", {}, "connect");
  const status = el("span", { class: "meta" }, "disconnected");

  const queryInput = el("input", {
    placeholder: "SELECT * FROM d1 WHERE HAS 1 AND HAS 3", size: "60",
  });
  const runBtn = el("button", {}, "run");
  runBtn.disabled = true;

  const results = el("div", { id: "results" });
  const historyList = el("ul", { id: "history" });
  const clusterPanel = el("div", { id: "cluster" });
  const codetablePanel = el("div", { id: "codetable" });

  const refreshCluster = async () => {
    if (!session.api) return;
    try {
      renderCluster(await session.api.getCluster(), clusterPanel, session, refreshCluster);
    } catch {
      clusterPanel.replaceChildren(el("div", { class: "banner" }, "cluster endpoint unreachable"));
    }
  };

  const refreshCodetable = async () => {
    if (!session.api) return;
    const view = await session.api.getCodetable();
    codetablePanel.replaceChildren();
    const table = el("table");
    const head = el("tr");
    for (const col of ["symbol", "usage", "bits"]) head.appendChild(el("th", {}, col));
    table.appendChild(head);
    for (const sym of view.symbols) {
      const tr = el("tr");
      tr.appendChild(el("td", {}, sym.symbol));
      tr.appendChild(el("td", {}, String(sym.usage)));
      tr.appendChild(el("td", {}, sym.bits.toFixed(6)));
      table.appendChild(tr);
    }
    codetablePanel.appendChild(table);
  };

  connectBtn.onclick = async () => {
    try {
      await session.connect(endpointInput.value, keyInput.value);
      status.textContent = "connected";
      runBtn.disabled = false;
      await refreshCluster();
      await refreshCodetable();
    } catch (err) {
      status.textContent = String(err instanceof Error ? err.message : err);
    }
  };

  runBtn.onclick = async () => {
    session.mode = modeSelect.value;
    runBtn.disabled = true;
    try {
      const payload = await session.run(queryInput.value);
      renderAnswer(payload, results);
      const index = session.history.length - 1;
      const item = el("li");
      const link = el("a", { href: "#" },
        `${session.history[index].mode}: ${session.history[index].text}`);
      link.onclick = async (ev) => {
        ev.preventDefault();
        renderAnswer(await session.replay(index), results);
      };
      item.appendChild(link);
      historyList.appendChild(item);
    } catch (err) {
      if (err instanceof AuthenticationFailure) {
        renderError("wrong key", results);
      } else if (err instanceof ApiError) {
        renderError(err.message, results);
      } else {
        renderError(String(err instanceof Error ? err.message : err), results);
      }
    } finally {
      runBtn.disabled = false;
    }
  };

  const connect = el("div", { class: "bar" });
  connect.append("endpoint ", endpointInput, " key ", keyInput, connectBtn, status);
  const queryBar = el("div", { class: "bar" });
  queryBar.append("query ", queryInput, " mode ", modeSelect, runBtn);

  root.append(
    el("h1", {}, "query console"),
    connect,
    queryBar,
    results,
    el("h2", {}, "history"),
    historyList,
    el("h2", {}, "cluster"),
    clusterPanel,
    el("h2", {}, "code table"),
    codetablePanel,
  );
}
