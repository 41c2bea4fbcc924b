/** DOM wiring: item card, y/n keyboard shortcuts, progress, offline flush,
 * and the live tally table. */

import { ApiClient, QueueItem } from "./api.js";
import { AdjudicationSession, SessionState } from "./session.js";
import { TallyPoller, tallyRows } from "./tally.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderItem(item: QueueItem): HTMLElement {
  const card = el("div", "item-card");
  card.appendChild(el("div", "rubric", item.rubric_prompt));
  card.appendChild(el("blockquote", "comment", item.comment_text));
  const tagLine = el("div", "tag");
  tagLine.appendChild(el("strong", undefined, item.tag_name));
  if (item.tag_definition) tagLine.appendChild(el("span", "definition", ` ${item.tag_definition}`));
  card.appendChild(tagLine);
  card.appendChild(el("div", "question", `Does this comment show "${item.tag_name}"? (y/n)`));
  return card;
}

export interface App {
  session: AdjudicationSession;
  tally: TallyPoller;
  dispose(): void;
}

/** Mount the adjudication UI into root and start the session. */
export async function mountApp(
  root: HTMLElement,
  opts: { runId: string; adjudicatorId: string; api?: ApiClient; pollMs?: number },
): Promise<App> {
  const api = opts.api ?? new ApiClient();
  const session = new AdjudicationSession(api, opts.runId, opts.adjudicatorId);
  const tally = new TallyPoller(api, opts.runId, opts.pollMs ?? 5000);

  root.innerHTML = "";
  const progress = el("div", "progress");
  const banner = el("div", "banner");
  banner.hidden = true;
  const cardHost = el("div", "card-host");
  const controls = el("div", "controls");
  const yesBtn = el("button", "yes", "Yes (y)");
  const noBtn = el("button", "no", "No (n)");
  controls.append(yesBtn, noBtn);
  const tallyHost = el("table", "tally");
  root.append(progress, banner, cardHost, controls, tallyHost);

  const render = (s: SessionState) => {
    progress.textContent = `${s.done} / ${s.total}`;
    banner.hidden = s.error === null && s.buffered === 0;
    banner.textContent = s.error
      ? `Submit failed: ${s.error}`
      : s.buffered > 0
        ? `${s.buffered} verdict(s) queued offline`
        : "";
    cardHost.innerHTML = "";
    if (s.current) {
      cardHost.appendChild(renderItem(s.current));
    } else if (s.total > 0) {
      cardHost.appendChild(el("div", "done-message", "All items adjudicated."));
    }
  };
  session.onChange(render);

  tally.onChange((report) => {
    tallyHost.innerHTML = "";
    const rows = tallyRows(report);
    const columns = Object.keys(report).sort();
    if (columns.length === 0) return;
    const head = el("tr");
    head.appendChild(el("th", undefined, "Tags"));
    for (const col of columns) head.appendChild(el("th", undefined, col));
    tallyHost.appendChild(head);
    for (const [tag, cells] of rows) {
      const tr = el("tr");
      tr.appendChild(el("td", undefined, tag));
      for (const col of columns) tr.appendChild(el("td", undefined, cells[col] ?? "-"));
      tallyHost.appendChild(tr);
    }
  });

  const onKey = (e: KeyboardEvent) => {
    if (e.key === "y" || e.key === "Y") void session.submit(1);
    else if (e.key === "n" || e.key === "N") void session.submit(-1);
  };
  const onOnline = () => void session.flush();
  document.addEventListener("keydown", onKey);
  window.addEventListener("online", onOnline);
  yesBtn.addEventListener("click", () => void session.submit(1));
  noBtn.addEventListener("click", () => void session.submit(-1));

  await session.load();
  tally.start();

  return {
    session,
    tally,
    dispose() {
      document.removeEventListener("keydown", onKey);
      window.removeEventListener("online", onOnline);
      tally.stop();
    },
  };
}

/** Entry point when served by the rmf service. */
export async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) return;
  const params = new URLSearchParams(window.location.search);
  const api = new ApiClient();
  let runId = params.get("run") ?? "";
  if (!runId) {
    const runs = await api.listRuns();
    if (runs.length === 0) {
      root.textContent = "No runs in the store yet.";
      return;
    }
    runId = runs[runs.length - 1].run_id;
  }
  const adjudicatorId = params.get("adjudicator") ?? "instructor";
  await mountApp(root, { runId, adjudicatorId, api });
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void boot();
}
