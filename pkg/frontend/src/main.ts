// Application bootstrap: login, conversation list, live feed, and the
// validate-before-send image flow.

import { GatewayClient } from './api.js';
import { ChatStore } from './chatStore.js';
import { UploadFlow } from './uploadFlow.js';
import { renderConversations, renderFlow, renderMessages, showPreview } from './ui.js';

const client = new GatewayClient('');
const store = new ChatStore();
let activeConversation: string | null = null;

const flow = new UploadFlow<File>(
  (file) => client.validateImage(file),
  (file, token, conv) => client.upload(file, token, conv),
);

function refresh(): void {
  renderConversations(store.conversations, activeConversation, selectConversation);
  if (activeConversation && client.username) {
    renderMessages(store, activeConversation, client.username);
  }
}

async function selectConversation(id: string): Promise<void> {
  activeConversation = id;
  const page = await client.messages(id);
  store.setHistory(id, page.messages);
  refresh();
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const username = params.get('user') ?? 'alice';
  await client.login(username);
  (document.getElementById('whoami') as HTMLElement).textContent = username;

  store.onChange(refresh);
  flow.onChange(renderFlow);

  store.setConversations(await client.conversations());
  if (store.conversations.length > 0) {
    await selectConversation(store.conversations[0]!.conversationId);
  }

  client.connectSocket((ev) => {
    store.applyEvent(ev);
  });

  const picker = document.getElementById('image-input') as HTMLInputElement;
  picker.onchange = () => {
    const file = picker.files?.[0] ?? null;
    showPreview(file);
    if (file) void flow.select(file);
  };

  (document.getElementById('send-image') as HTMLButtonElement).onclick = async () => {
    if (!activeConversation) return;
    await flow.send(activeConversation);
    showPreview(null);
    picker.value = '';
  };

  (document.getElementById('revalidate') as HTMLButtonElement).onclick = () => {
    void flow.revalidate();
  };

  const textInput = document.getElementById('text-input') as HTMLInputElement;
  (document.getElementById('send-text') as HTMLButtonElement).onclick = async () => {
    // text messages flow independently of any in-flight image validation
    if (!activeConversation || !textInput.value.trim()) return;
    const msg = await client.sendText(activeConversation, textInput.value.trim());
    store.appendLocal(msg);
    textInput.value = '';
  };
}

void boot();
