from .cam import compute_cam, extract_cams, normalize_cam
from .losses import S4LConfig, batch_hard_triplet, s4l_loss
from .net import ABNORMAL, NORMAL, ClassifierHead, LabelerNet
from .train import LabelerResult, train_labeler
