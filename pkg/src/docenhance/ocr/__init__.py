from .crnn import CRNN, CRNNConfig, crnn_forward
from .ctc import CTCInfeasibleError, ctc_loss, ctc_loss_labels, ctc_loss_torch
from .finetune import (batch_ctc, extract_word_patches, finetune_step, freeze, pretrain_crnn, recognize,
                       recognizer_cer)
from .text import Alphabet, WordBox, cer, ctc_greedy_decode, levenshtein
