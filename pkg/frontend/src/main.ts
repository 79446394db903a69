/** DOM wiring. All behavior lives in the controllers; this file only renders. */

import { GatewayClient } from "./api";
import { ChatController, ChatState } from "./chat";
import { ClinicianController, ClinicianState, provenanceRows } from "./clinician";
import { tokenToDataUrl } from "./qr";

const VOICE_FIXTURES = [
  "voice_001",
  "voice_002",
  "voice_003",
  "voice_004",
  "voice_005",
  "voice_006",
];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function baseUrl(): string {
  // served by the gateway at /ui, so the API shares the origin
  return window.location.origin;
}

function renderChat(state: ChatState): void {
  const list = el<HTMLDivElement>("chat-messages");
  list.innerHTML = "";
  for (const message of state.messages) {
    const bubble = document.createElement("div");
    bubble.className = `bubble ${message.direction}`;
    bubble.textContent = message.text;
    const meta = document.createElement("div");
    meta.className = "meta";
    meta.textContent = message.at;
    bubble.appendChild(meta);
    list.appendChild(bubble);
  }
  list.scrollTop = list.scrollHeight;
  el<HTMLSpanElement>("chat-record").textContent = state.recordId
    ? `${state.recordId} (v${state.recordVersion})`
    : "not enrolled";
  el<HTMLDivElement>("chat-error").textContent = state.error ?? "";
  const sendButton = el<HTMLButtonElement>("chat-send");
  sendButton.disabled = state.busy;
  sendButton.textContent = state.busy ? "..." : "Send";
  void renderToken(state.lastShareToken);
}

async function renderToken(token: string | null): Promise<void> {
  const panel = el<HTMLDivElement>("chat-token");
  if (!token) {
    panel.innerHTML = "";
    return;
  }
  const dataUrl = await tokenToDataUrl(token);
  panel.innerHTML = "";
  const caption = document.createElement("div");
  caption.className = "token-caption";
  caption.textContent = "Latest share token (scan or copy):";
  panel.appendChild(caption);
  if (dataUrl) {
    const img = document.createElement("img");
    img.src = dataUrl;
    img.alt = "share token QR";
    panel.appendChild(img);
  }
  const text = document.createElement("code");
  text.textContent = token;
  panel.appendChild(text);
}

function renderClinician(state: ClinicianState): void {
  el<HTMLDivElement>("clin-error").textContent = state.error ?? "";
  el<HTMLDivElement>("clin-toast").textContent = state.toast ?? "";
  el<HTMLSpanElement>("clin-cap").textContent = state.capability
    ? `${state.capability} on ${state.recordId} (v${state.recordVersion})`
    : "no record open";

  const canWrite = state.canWrite;
  const timeline = el<HTMLTableSectionElement>("clin-timeline");
  timeline.innerHTML = "";
  for (const event of state.events) {
    const row = timeline.insertRow();
    row.insertCell().textContent = String(event.lclock);
    row.insertCell().textContent = event.wall_time;
    row.insertCell().textContent = event.actor;
    row.insertCell().textContent = event.payload.kind;
    row.insertCell().textContent = JSON.stringify(
      Object.fromEntries(Object.entries(event.payload).filter(([k]) => k !== "kind")),
    ).slice(0, 120);
  }

  const fields = el<HTMLTableSectionElement>("clin-fields");
  fields.innerHTML = "";
  for (const rowData of provenanceRows(state.record)) {
    const row = fields.insertRow();
    row.insertCell().textContent = rowData.path;
    row.insertCell().textContent = rowData.source;
    const badge = row.insertCell();
    badge.textContent = rowData.verified ? "verified" : "unverified";
    badge.className = rowData.verified ? "badge ok" : "badge";
    const actions = row.insertCell();
    if (!rowData.verified) {
      const button = document.createElement("button");
      button.textContent = "verify";
      button.disabled = !canWrite;
      button.onclick = () => void clinician.verifyField(rowData.path);
      actions.appendChild(button);
    }
  }

  const alerts = el<HTMLDivElement>("clin-alerts");
  alerts.innerHTML = "";
  for (const alert of state.alerts) {
    const card = document.createElement("div");
    card.className = `alert ${alert.severity ?? ""}`;
    const head = document.createElement("div");
    head.className = "alert-head";
    head.textContent = `${alert.rule_id} ${alert.rule_name} — ${alert.severity} — ${alert.status}`;
    card.appendChild(head);
    const body = document.createElement("div");
    body.textContent = alert.clinician_text;
    card.appendChild(body);
    const controls = document.createElement("div");
    controls.className = "alert-controls";
    for (const status of ["acknowledged", "acted", "dismissed"]) {
      const button = document.createElement("button");
      button.textContent = status;
      button.disabled = !canWrite || alert.status === status;
      button.onclick = () => void clinician.setAlertStatus(alert.alert_id, status);
      controls.appendChild(button);
    }
    if (alert.review) {
      const review = document.createElement("span");
      review.className = "badge ok";
      review.textContent = `reviewed: accurate=${alert.review.accurate} relevant=${alert.review.relevant} (${alert.review.reviewer})`;
      controls.appendChild(review);
    } else {
      for (const [label, accurate, relevant] of [
        ["accurate+relevant", true, true],
        ["accurate only", true, false],
        ["inaccurate", false, false],
      ] as const) {
        const button = document.createElement("button");
        button.textContent = `review: ${label}`;
        button.disabled = !canWrite;
        button.onclick = () => void clinician.reviewAlert(alert.alert_id, accurate, relevant);
        controls.appendChild(button);
      }
    }
    card.appendChild(controls);
    alerts.appendChild(card);
  }
}

const client = new GatewayClient(baseUrl());
const chat = new ChatController(client, `+92300${Math.floor(Math.random() * 9000000 + 1000000)}`);
const clinician = new ClinicianController(client);

chat.onChange(renderChat);
clinician.onChange(renderClinician);

function wire(): void {
  el<HTMLButtonElement>("chat-send").onclick = () => {
    const input = el<HTMLInputElement>("chat-input");
    const text = input.value.trim();
    if (!text) return;
    input.value = "";
    void chat.sendText(text);
  };
  el<HTMLInputElement>("chat-input").onkeydown = (event) => {
    if (event.key === "Enter") el<HTMLButtonElement>("chat-send").click();
  };
  const voiceSelect = el<HTMLSelectElement>("chat-voice");
  for (const ref of VOICE_FIXTURES) {
    const option = document.createElement("option");
    option.value = ref;
    option.textContent = ref;
    voiceSelect.appendChild(option);
  }
  el<HTMLButtonElement>("chat-voice-send").onclick = () => {
    void chat.sendVoice(voiceSelect.value);
  };
  el<HTMLButtonElement>("chat-image-send").onclick = () => {
    void chat.sendImage(`report_${Date.now()}`);
  };
  el<HTMLButtonElement>("clin-redeem").onclick = () => {
    void clinician.enterToken(el<HTMLInputElement>("clin-token").value);
  };
  el<HTMLButtonElement>("clin-key-use").onclick = () => {
    void clinician.useClinicianKey(
      el<HTMLInputElement>("clin-key").value,
      el<HTMLInputElement>("clin-record").value,
      "console",
    );
  };
  el<HTMLButtonElement>("clin-refresh").onclick = () => void clinician.refresh();
}

wire();
renderChat(chat.state);
renderClinician(clinician.state);
