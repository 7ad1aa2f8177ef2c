// DOM rendering: conversation list, chat pane, and the validate-before-send
// image controls. The send button state is driven exclusively by the upload
// flow snapshot.

import type { ChatStore } from './chatStore.js';
import type { FlowSnapshot } from './uploadFlow.js';
import type { ChatMessage, ConversationSummary } from './types.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function renderConversations(
  list: ConversationSummary[],
  activeId: string | null,
  onSelect: (id: string) => void,
): void {
  const root = el<HTMLUListElement>('conversation-list');
  root.innerHTML = '';
  for (const conv of list) {
    const item = document.createElement('li');
    item.className = conv.conversationId === activeId ? 'conversation active' : 'conversation';
    const others = conv.members.join(', ');
    const when = conv.lastActivity
      ? new Date(conv.lastActivity * 1000).toLocaleTimeString()
      : '';
    item.innerHTML = `
      <span class="conv-title">${others}</span>
      <span class="conv-preview">${conv.preview ?? 'no messages yet'}</span>
      <span class="conv-time">${when}</span>`;
    item.onclick = () => onSelect(conv.conversationId);
    root.appendChild(item);
  }
}

export function renderMessages(store: ChatStore, conversationId: string, me: string): void {
  const pane = el<HTMLDivElement>('messages');
  pane.innerHTML = '';
  for (const msg of store.messages(conversationId)) {
    pane.appendChild(messageNode(msg, me));
  }
  pane.scrollTop = pane.scrollHeight;
}

function messageNode(msg: ChatMessage, me: string): HTMLElement {
  const node = document.createElement('div');
  node.className = msg.senderId === me ? 'message mine' : 'message theirs';
  const time = new Date(msg.sentAt * 1000).toLocaleTimeString();
  if (msg.kind === 'image' && msg.imageUrl) {
    node.innerHTML = `<img src="${msg.imageUrl}" alt="shared image" />
      <span class="timestamp">${time}</span>`;
  } else {
    node.innerHTML = `<span class="body"></span><span class="timestamp">${time}</span>`;
    (node.querySelector('.body') as HTMLElement).textContent = msg.body ?? '';
  }
  return node;
}

const STATE_LABELS: Record<FlowSnapshot['state'], string> = {
  idle: '',
  previewing: 'Preview ready',
  validating: 'Validating…',
  accepted: 'Verified ✓',
  blocked: 'Blocked',
  error: 'Error',
};

export function renderFlow(snap: FlowSnapshot): void {
  const badge = el<HTMLSpanElement>('flow-badge');
  const note = el<HTMLSpanElement>('flow-message');
  const send = el<HTMLButtonElement>('send-image');
  const revalidate = el<HTMLButtonElement>('revalidate');

  badge.dataset.state = snap.state;
  badge.textContent = STATE_LABELS[snap.state];
  note.textContent = snap.message ?? '';
  send.disabled = snap.state !== 'accepted';
  revalidate.hidden = snap.state !== 'previewing';
}

export function showPreview(file: File | null): void {
  const img = el<HTMLImageElement>('preview');
  if (file === null) {
    img.hidden = true;
    return;
  }
  img.src = URL.createObjectURL(file);
  img.hidden = false;
}
